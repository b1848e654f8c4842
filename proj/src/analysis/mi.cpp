#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "tdformer/analysis.hpp"
#include "tdformer/layers.hpp"

namespace tdformer {

namespace {

double plugin_mi(const std::array<double, 4>& counts, double n) {
  // counts indexed by 2 * x + y
  const double px[2] = {(counts[0] + counts[1]) / n, (counts[2] + counts[3]) / n};
  const double py[2] = {(counts[0] + counts[2]) / n, (counts[1] + counts[3]) / n};
  double mi = 0.0;
  for (int x = 0; x < 2; ++x) {
    for (int y = 0; y < 2; ++y) {
      const double pxy = counts[2 * x + y] / n;
      if (pxy > 0.0) mi += pxy * std::log2(pxy / (px[x] * py[y]));
    }
  }
  return std::max(0.0, mi);
}

}  // namespace

double MiMatrix::mean_off_diagonal() const {
  if (T < 2) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < T; ++i) {
    for (std::size_t j = 0; j < T; ++j) {
      if (i != j) sum += at(i, j);
    }
  }
  return sum / static_cast<double>(T * (T - 1));
}

MiMatrix mi_matrix(const SpikeTensor& features, std::size_t units, std::uint64_t seed) {
  const Shape& s = features.shape();
  if (s.rank() != 4) throw DimensionError("mi_matrix expects [T, B, N, C], got " + s.str());
  const std::size_t T = s[0], B = s[1], N = s[2], C = s[3];
  if (B < 100) {
    throw DomainError("mi_matrix needs at least 100 samples, got " + std::to_string(B));
  }
  std::vector<std::size_t> pick(N * C);
  std::iota(pick.begin(), pick.end(), 0);
  if (units != 0 && units < pick.size()) {
    Rng rng(seed);
    std::shuffle(pick.begin(), pick.end(), rng);
    pick.resize(units);
    std::sort(pick.begin(), pick.end());
  }

  MiMatrix out;
  out.T = T;
  out.samples = B;
  out.units = pick.size();
  out.values.assign(T * T, 0.0);
  const auto bits = features.bits();
  const double n = static_cast<double>(B);
  std::vector<unsigned char> x(T * B);
  for (std::size_t u : pick) {
    bool degenerate = false;
    for (std::size_t t = 0; t < T; ++t) {
      std::size_t ones = 0;
      for (std::size_t b = 0; b < B; ++b) {
        const unsigned char v = bits[(t * B + b) * N * C + u] != 0.0;
        x[t * B + b] = v;
        ones += v;
      }
      degenerate = degenerate || ones == 0 || ones == B;
    }
    out.degenerate_units += degenerate;
    for (std::size_t i = 0; i < T; ++i) {
      for (std::size_t j = i; j < T; ++j) {
        std::array<double, 4> counts{};
        for (std::size_t b = 0; b < B; ++b) counts[2 * x[i * B + b] + x[j * B + b]] += 1.0;
        const double mi = plugin_mi(counts, n);
        out.values[i * T + j] += mi;
        if (j != i) out.values[j * T + i] += mi;
      }
    }
  }
  for (double& v : out.values) v /= static_cast<double>(out.units);
  return out;
}

namespace {

// Viridis anchors, interpolated linearly.
std::string colormap(double t) {
  static const double anchors[5][3] = {
      {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  const int i = std::min(3, static_cast<int>(t));
  const double u = t - i;
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x",
                static_cast<int>(std::lround(anchors[i][0] + u * (anchors[i + 1][0] - anchors[i][0]))),
                static_cast<int>(std::lround(anchors[i][1] + u * (anchors[i + 1][1] - anchors[i][1]))),
                static_cast<int>(std::lround(anchors[i][2] + u * (anchors[i + 1][2] - anchors[i][2]))));
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string mi_svg(const MiMatrix& mi, const std::string& title) {
  const int cell = 40, margin = 50, bar_w = 16, bar_gap = 24;
  const int side = static_cast<int>(mi.T) * cell;
  const int width = margin + side + bar_gap + bar_w + 60;
  const int height = margin + side + 40;
  double vmax = 0.0;
  for (double v : mi.values) vmax = std::max(vmax, v);
  if (vmax <= 0.0) vmax = 1.0;

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<text x=\"" << margin << "\" y=\"20\" font-size=\"13\">" << title << "</text>\n";
  for (std::size_t i = 0; i < mi.T; ++i) {
    for (std::size_t j = 0; j < mi.T; ++j) {
      const double v = mi.at(i, j);
      o << "<rect x=\"" << margin + static_cast<int>(j) * cell << "\" y=\""
        << margin + static_cast<int>(i) * cell << "\" width=\"" << cell << "\" height=\"" << cell
        << "\" fill=\"" << colormap(v / vmax) << "\"><title>t" << i << ",t" << j << ": "
        << fixed(v, 4) << " bits</title></rect>\n";
    }
    o << "<text x=\"" << margin - 20 << "\" y=\"" << margin + static_cast<int>(i) * cell + cell / 2 + 4
      << "\">t" << i << "</text>\n";
    o << "<text x=\"" << margin + static_cast<int>(i) * cell + cell / 2 - 6 << "\" y=\""
      << margin + side + 16 << "\">t" << i << "</text>\n";
  }
  // Colorbar, top = vmax.
  const int bx = margin + side + bar_gap;
  const int steps = 32;
  for (int k = 0; k < steps; ++k) {
    const double t = 1.0 - (k + 0.5) / steps;
    o << "<rect x=\"" << bx << "\" y=\"" << margin + k * side / steps << "\" width=\"" << bar_w
      << "\" height=\"" << side / steps + 1 << "\" fill=\"" << colormap(t) << "\"/>\n";
  }
  o << "<text x=\"" << bx + bar_w + 4 << "\" y=\"" << margin + 8 << "\">" << fixed(vmax, 3)
    << "</text>\n";
  o << "<text x=\"" << bx + bar_w + 4 << "\" y=\"" << margin + side << "\">0 bits</text>\n";
  o << "</svg>\n";
  return o.str();
}

}  // namespace tdformer
