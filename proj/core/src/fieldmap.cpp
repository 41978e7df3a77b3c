#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "egun/tracker.hpp"

namespace egun {

namespace {

// Hermite form with central-difference tangents (clamped at the ends):
// node-exact, C1 across cells.
double catmull_rom(double fm1, double f0, double f1, double f2, double s) {
  const double m0 = 0.5 * (f1 - fm1);
  const double m1 = 0.5 * (f2 - f0);
  const double s2 = s * s, s3 = s2 * s;
  return (2 * s3 - 3 * s2 + 1) * f0 + (s3 - 2 * s2 + s) * m0 +
         (-2 * s3 + 3 * s2) * f1 + (s3 - s2) * m1;
}

}  // namespace

Fieldmap read_fieldmap(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open fieldmap " + path);

  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  char hash = 0;
  Fieldmap fm;
  if (!(hs >> hash >> fm.nz >> fm.nr >> fm.z0 >> fm.z1 >> fm.r0 >> fm.r1) || hash != '#')
    throw std::runtime_error("malformed fieldmap header in " + path);
  if (fm.nz < 2 || fm.nr < 2 || !(fm.z1 > fm.z0) || !(fm.r1 > fm.r0))
    throw std::runtime_error("degenerate fieldmap grid in " + path);

  const std::size_t n = std::size_t(fm.nz) * fm.nr;
  fm.ez.resize(n);
  fm.er.resize(n);
  double z, r;
  for (std::size_t i = 0; i < n; ++i)
    if (!(in >> z >> r >> fm.ez[i] >> fm.er[i]))
      throw std::runtime_error("truncated fieldmap " + path);

  fm.valid.assign(n, 1);
  std::ifstream mask(path + ".mask");
  if (mask) {
    int flag;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(mask >> flag)) throw std::runtime_error("truncated mask for " + path);
      fm.valid[i] = flag ? 1 : 0;
    }
  }
  return fm;
}

std::optional<Vec3> field_at(const Fieldmap& fm, const Vec3& x) {
  const double rho = std::hypot(x.x(), x.y());
  if (x.z() < fm.z0 || x.z() > fm.z1 || rho < fm.r0 || rho > fm.r1) return std::nullopt;

  const double fz = (x.z() - fm.z0) / fm.dz();
  const double fr = (rho - fm.r0) / fm.dr();
  const int iz = std::min(fm.nz - 2, static_cast<int>(fz));
  const int ir = std::min(fm.nr - 2, static_cast<int>(fr));
  const double sz = fz - iz;
  const double sr = fr - ir;

  auto clampz = [&](int i) { return std::max(0, std::min(fm.nz - 1, i)); };
  auto clampr = [&](int i) { return std::max(0, std::min(fm.nr - 1, i)); };

  double ez_rows[4], er_rows[4];
  for (int a = -1; a <= 2; ++a) {
    const int kz = clampz(iz + a);
    double ez_col[4], er_col[4];
    for (int b = -1; b <= 2; ++b) {
      const int kr = clampr(ir + b);
      if (!fm.valid[fm.idx(kz, kr)]) return std::nullopt;
      ez_col[b + 1] = fm.ez[fm.idx(kz, kr)];
      er_col[b + 1] = fm.er[fm.idx(kz, kr)];
    }
    ez_rows[a + 1] = catmull_rom(ez_col[0], ez_col[1], ez_col[2], ez_col[3], sr);
    er_rows[a + 1] = catmull_rom(er_col[0], er_col[1], er_col[2], er_col[3], sr);
  }
  const double ez = catmull_rom(ez_rows[0], ez_rows[1], ez_rows[2], ez_rows[3], sz);
  const double er = catmull_rom(er_rows[0], er_rows[1], er_rows[2], er_rows[3], sz);

  Vec3 e(0.0, 0.0, ez);
  if (rho > 0.0) {
    e.x() = er * x.x() / rho;
    e.y() = er * x.y() / rho;
  }
  return e;
}

}  // namespace egun
