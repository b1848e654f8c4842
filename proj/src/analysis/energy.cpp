#include "tdformer/analysis.hpp"

namespace tdformer {

namespace {

bool is_tdac(const std::string& label) {
  const bool td_slot = label.size() > 3 && label.compare(label.size() - 3, 3, ".td") == 0;
  return td_slot || label.rfind("pm.", 0) == 0;
}

}  // namespace

double sop(double rate, double steps, double flops) { return rate * steps * flops; }

double EnergyLedger::tdac_share() const {
  const double total = total_pj();
  return total > 0.0 ? tdac_pj / total : 0.0;
}

std::map<std::string, double> measured_input_rates(const OpCounter& counter) {
  std::map<std::string, double> out;
  for (const auto& [label, c] : counter.by_label()) {
    if (c.left_elements > 0) out[label] = c.left_nonzero / c.left_elements;
  }
  return out;
}

EnergyLedger energy_report(const OpCounter& counter, const std::map<std::string, double>& rates,
                           std::size_t batch, const EnergyConstants& constants,
                           const std::set<std::string>& dense) {
  if (batch == 0) throw ConfigError("energy_report: batch must be positive");
  EnergyLedger ledger;
  ledger.constants = constants;
  const double per = 1.0 / static_cast<double>(batch);
  for (const auto& [label, c] : counter.by_label()) {
    // Unlabelled counts are residual spike ORs outside any layer.
    if (label.empty()) continue;
    EnergyRow row;
    row.label = label;
    row.tdac = is_tdac(label);
    row.dense = dense.count(label) > 0;
    row.macs = c.macs * per;
    row.accumulates = c.accumulates * per;
    row.elementwise = c.elementwise * per;
    if (c.macs > 0) {
      auto it = rates.find(label);
      if (it == rates.end()) throw ConfigError("energy_report: no firing rate for " + label);
      row.input_rate = it->second;
    }
    // macs already spans every step, so this is f_r * T * per-step FLOPs.
    row.sop = row.input_rate * row.macs;
    row.energy_pj = (row.dense ? constants.e_mac_pj * row.macs : constants.e_ac_pj * row.sop) +
                    constants.e_ac_pj * row.elementwise;
    (row.tdac ? ledger.tdac_pj : ledger.baseline_pj) += row.energy_pj;
    ledger.rows.push_back(row);
  }
  return ledger;
}

}  // namespace tdformer
