#include "v2p/geom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace v2p::geom {

namespace {

constexpr double kDegenerateArea = 1e-12;
constexpr double kVertexMergeEps = 1e-9;  // collapse clipper slivers below this

struct Pt2 {
  double x, y;
};

double cross(const Pt2& o, const Pt2& a, const Pt2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Shoelace area of a simple polygon (positive for CCW order).
double polygon_area(const std::vector<Pt2>& poly) {
  if (poly.size() < 3) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Pt2& p = poly[i];
    const Pt2& q = poly[(i + 1) % poly.size()];
    s += p.x * q.y - p.y * q.x;
  }
  return 0.5 * s;
}

// Sutherland-Hodgman: clip `subject` against the half-plane left of a->b.
std::vector<Pt2> clip_edge(const std::vector<Pt2>& subject, const Pt2& a,
                           const Pt2& b) {
  std::vector<Pt2> out;
  out.reserve(subject.size() + 2);
  const std::size_t n = subject.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Pt2& cur = subject[i];
    const Pt2& nxt = subject[(i + 1) % n];
    const double dc = cross(a, b, cur);
    const double dn = cross(a, b, nxt);
    if (dc >= 0.0) out.push_back(cur);
    if ((dc > 0.0 && dn < 0.0) || (dc < 0.0 && dn > 0.0)) {
      const double t = dc / (dc - dn);
      out.push_back({cur.x + t * (nxt.x - cur.x), cur.y + t * (nxt.y - cur.y)});
    }
  }
  return out;
}

std::vector<Pt2> merge_close_vertices(std::vector<Pt2> poly) {
  if (poly.size() < 2) return poly;
  std::vector<Pt2> out;
  out.reserve(poly.size());
  for (const Pt2& p : poly) {
    if (out.empty() || std::abs(p.x - out.back().x) > kVertexMergeEps ||
        std::abs(p.y - out.back().y) > kVertexMergeEps) {
      out.push_back(p);
    }
  }
  while (out.size() > 1 && std::abs(out.front().x - out.back().x) <= kVertexMergeEps &&
         std::abs(out.front().y - out.back().y) <= kVertexMergeEps) {
    out.pop_back();
  }
  return out;
}

std::array<Pt2, 4> bev_footprint(const Box3D& box) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double hl = 0.5 * box.length, hw = 0.5 * box.width;
  // Same x/y pattern as corners(): CCW viewed from +Z.
  const double lx[4] = {hl, -hl, -hl, hl};
  const double wy[4] = {hw, hw, -hw, -hw};
  std::array<Pt2, 4> out;
  for (int i = 0; i < 4; ++i) {
    out[i] = {box.center.x + c * lx[i] - s * wy[i],
              box.center.y + s * lx[i] + c * wy[i]};
  }
  return out;
}

}  // namespace

double Vec3::norm() const { return std::sqrt(x * x + y * y + z * z); }

double wrap_angle(double a) {
  const double two_pi = 2.0 * M_PI;
  a = std::fmod(a, two_pi);
  if (a <= -M_PI) a += two_pi;
  if (a > M_PI) a -= two_pi;
  return a;
}

bool Box3D::valid() const {
  return length > 0.0 && width > 0.0 && height > 0.0 && std::isfinite(center.x) &&
         std::isfinite(center.y) && std::isfinite(center.z) && std::isfinite(yaw);
}

CornerSet corners(const Box3D& box) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double hl = 0.5 * box.length, hw = 0.5 * box.width, hh = 0.5 * box.height;
  const double lx[4] = {hl, -hl, -hl, hl};
  const double wy[4] = {hw, hw, -hw, -hw};
  CornerSet out;
  for (int i = 0; i < 8; ++i) {
    const int j = i % 4;
    const double zz = (i < 4) ? -hh : hh;
    out[i] = {box.center.x + c * lx[j] - s * wy[j],
              box.center.y + s * lx[j] + c * wy[j], box.center.z + zz};
  }
  return out;
}

Vec3 to_canonical(const Box3D& box, const Vec3& p) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const Vec3 d = p - box.center;
  return {c * d.x + s * d.y, -s * d.x + c * d.y, d.z};
}

Vec3 from_canonical(const Box3D& box, const Vec3& p) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  return {box.center.x + c * p.x - s * p.y, box.center.y + s * p.x + c * p.y,
          box.center.z + p.z};
}

std::vector<Vec3> canonicalize(const Box3D& box, std::span<const Vec3> pts) {
  std::vector<Vec3> out;
  out.reserve(pts.size());
  for (const Vec3& p : pts) out.push_back(to_canonical(box, p));
  return out;
}

bool contains(const Box3D& box, const Vec3& p) {
  // Faces are closed; the 1e-9 m slack keeps ties stable under the rotation
  // round-trip (a corner fed back through to_canonical lands within one ulp
  // of the face).
  constexpr double kFaceEps = 1e-9;
  const Vec3 q = to_canonical(box, p);
  return std::abs(q.x) <= 0.5 * box.length + kFaceEps &&
         std::abs(q.y) <= 0.5 * box.width + kFaceEps &&
         std::abs(q.z) <= 0.5 * box.height + kFaceEps;
}

double intersection_area_bev(const Box3D& a, const Box3D& b) {
  const auto ra = bev_footprint(a);
  const auto rb = bev_footprint(b);
  std::vector<Pt2> poly(ra.begin(), ra.end());
  for (int i = 0; i < 4 && poly.size() >= 3; ++i) {
    poly = clip_edge(poly, rb[i], rb[(i + 1) % 4]);
  }
  poly = merge_close_vertices(std::move(poly));
  if (poly.size() < 3) return 0.0;
  return std::max(0.0, polygon_area(poly));
}

double iou_bev(const Box3D& a, const Box3D& b, IouDiag* diag) {
  const double area_a = a.length * a.width;
  const double area_b = b.length * b.width;
  if (area_a < kDegenerateArea || area_b < kDegenerateArea) {
    if (diag) diag->degenerate = true;
    return 0.0;
  }
  const double inter = intersection_area_bev(a, b);
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou_3d(const Box3D& a, const Box3D& b, IouDiag* diag) {
  const double vol_a = a.volume();
  const double vol_b = b.volume();
  if (vol_a < kDegenerateArea || vol_b < kDegenerateArea) {
    if (diag) diag->degenerate = true;
    return 0.0;
  }
  const double z_lo = std::max(a.center.z - 0.5 * a.height, b.center.z - 0.5 * b.height);
  const double z_hi = std::min(a.center.z + 0.5 * a.height, b.center.z + 0.5 * b.height);
  const double dz = z_hi - z_lo;
  if (dz <= 0.0) return 0.0;
  const double inter = intersection_area_bev(a, b) * dz;
  const double uni = vol_a + vol_b - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

McEstimate iou_3d_montecarlo(const Box3D& a, const Box3D& b,
                             std::int64_t samples, Rng& rng) {
  if (samples < 1) throw std::invalid_argument("iou_3d_montecarlo: samples must be >= 1");
  const std::int64_t na = samples / 2;
  const std::int64_t nb = samples - na;

  auto sample_in = [&rng](const Box3D& box) {
    const Vec3 q{box.length * (rng.uniform01() - 0.5),
                 box.width * (rng.uniform01() - 0.5),
                 box.height * (rng.uniform01() - 0.5)};
    return from_canonical(box, q);
  };

  std::int64_t hits_ab = 0;  // samples of a that fall in b
  for (std::int64_t i = 0; i < na; ++i) {
    if (contains(b, sample_in(a))) ++hits_ab;
  }
  std::int64_t hits_ba = 0;
  for (std::int64_t i = 0; i < nb; ++i) {
    if (contains(a, sample_in(b))) ++hits_ba;
  }

  const double vol_a = a.volume(), vol_b = b.volume();
  const double fa = na > 0 ? static_cast<double>(hits_ab) / static_cast<double>(na) : 0.0;
  const double fb = nb > 0 ? static_cast<double>(hits_ba) / static_cast<double>(nb) : 0.0;
  // Average the two one-sided estimates of the intersection volume.
  const double inter = 0.5 * (vol_a * fa + vol_b * fb);
  const double uni = vol_a + vol_b - inter;

  McEstimate out;
  out.iou = uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;

  // Binomial variance of each fraction, then the delta method through
  // iou = I / (va + vb - I), d(iou)/dI = (va + vb) / (va + vb - I)^2.
  const double var_fa = na > 0 ? fa * (1.0 - fa) / static_cast<double>(na) : 0.0;
  const double var_fb = nb > 0 ? fb * (1.0 - fb) / static_cast<double>(nb) : 0.0;
  const double var_inter = 0.25 * (vol_a * vol_a * var_fa + vol_b * vol_b * var_fb);
  const double denom = vol_a + vol_b - inter;
  if (denom > 0.0) {
    const double g = (vol_a + vol_b) / (denom * denom);
    out.stderr_est = g * std::sqrt(var_inter);
  }
  return out;
}

}  // namespace v2p::geom
