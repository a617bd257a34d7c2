#include "v2p/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <stdexcept>

#include "v2p/ad/losses.hpp"
#include "v2p/ad/mlp.hpp"

namespace v2p::decoder {
namespace {

constexpr double kCoincidenceEps = 1e-9;  // meters

struct Neighbor {
  double d2 = 0.0;
  int idx = -1;
};

bool closer(const Neighbor& a, const Neighbor& b) {
  if (a.d2 != b.d2) return a.d2 < b.d2;
  return a.idx < b.idx;
}

}  // namespace

std::vector<ad::Graph::MixRow> knn_weights(std::span<const geom::Vec3> queries,
                                           std::span<const geom::Vec3> sources,
                                           int k) {
  if (sources.empty())
    throw std::runtime_error("knn_weights: no source points");
  if (k < 1) throw std::runtime_error("knn_weights: k must be >= 1");
  const int use = std::min<int>(k, static_cast<int>(sources.size()));

  std::vector<ad::Graph::MixRow> mix;
  mix.reserve(queries.size());
  std::vector<Neighbor> best;
  for (const auto& q : queries) {
    best.assign(std::size_t(use), Neighbor{});
    for (auto& b : best) b.d2 = std::numeric_limits<double>::infinity();
    for (int s = 0; s < static_cast<int>(sources.size()); ++s) {
      geom::Vec3 dv = sources[s] - q;
      Neighbor cand{dv.x * dv.x + dv.y * dv.y + dv.z * dv.z, s};
      // Insertion into the small sorted best-list keeps (d2, idx) order.
      if (!closer(cand, best.back())) continue;
      int pos = use - 1;
      while (pos > 0 && closer(cand, best[pos - 1])) {
        best[pos] = best[pos - 1];
        --pos;
      }
      best[pos] = cand;
    }

    ad::Graph::MixRow row;
    if (std::sqrt(best[0].d2) < kCoincidenceEps) {
      row.emplace_back(best[0].idx, 1.0);  // exact copy of the nearest
    } else {
      double wsum = 0.0;
      std::vector<double> w(static_cast<std::size_t>(use), 0.0);
      for (int i = 0; i < use; ++i) {
        w[std::size_t(i)] = 1.0 / std::sqrt(best[std::size_t(i)].d2);
        wsum += w[std::size_t(i)];
      }
      for (int i = 0; i < use; ++i)
        row.emplace_back(best[std::size_t(i)].idx, w[std::size_t(i)] / wsum);
    }
    mix.push_back(std::move(row));
  }
  return mix;
}

ad::Tensor knn_interpolate(ad::Graph& g, std::span<const geom::Vec3> queries,
                           std::span<const geom::Vec3> sources,
                           ad::Tensor source_features, int k) {
  if (static_cast<int>(sources.size()) != source_features.rows())
    throw std::runtime_error(
        "knn_interpolate: source count does not match feature rows");
  return g.weighted_sum_rows(source_features, knn_weights(queries, sources, k));
}

std::vector<geom::Vec3> voxel_centers(const backbone::SparseFeat& level) {
  std::vector<geom::Vec3> out;
  out.reserve(level.indices.size());
  for (const auto& v : level.indices)
    out.push_back(voxel::devoxelize(v, level.spec));
  return out;
}

ad::Tensor decode_block(ad::Graph& g, ad::ParamStore& store,
                        const std::string& prefix, ad::Tensor p_prev,
                        const backbone::SparseFeat& level,
                        std::span<const geom::Vec3> raw_xyz, int out_width,
                        int k) {
  ad::Tensor identity =
      ad::affine(g, store, prefix + ".id", p_prev, out_width, true);
  if (level.indices.empty()) {
    std::cerr << "warning: " << prefix
              << ": empty voxel level, residual path skipped\n";
    return g.relu(identity);
  }
  std::vector<geom::Vec3> centers = voxel_centers(level);
  ad::Tensor interp =
      knn_interpolate(g, raw_xyz, centers, level.features, k);
  ad::Tensor residual =
      ad::affine(g, store, prefix + ".res", interp, out_width, true);
  return g.relu(g.add(identity, residual));
}

DecodeOut decode_all(ad::Graph& g, ad::ParamStore& store,
                     const config::DecoderConfig& dc,
                     const backbone::EncoderOut& enc,
                     const scene::PointCloud& raw) {
  if (dc.widths.size() != 5)
    throw std::runtime_error("decoder needs 5 widths (P4..P0)");
  if (enc.empty) throw std::runtime_error("decode_all on an empty encoding");
  if (raw.points.empty())
    throw std::runtime_error("decode_all on an empty point cloud");

  std::vector<geom::Vec3> raw_xyz;
  raw_xyz.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw_xyz.push_back(raw.xyz(i));

  // P_init: deepest voxel features splatted onto every raw point.
  const backbone::SparseFeat& v4 = enc.levels[3];
  ad::Tensor p = knn_interpolate(g, raw_xyz, voxel_centers(v4), v4.features,
                                 dc.knn_k);

  DecodeOut out;
  for (int l = 4; l >= 1; --l) {
    p = decode_block(g, store, "decoder.d" + std::to_string(l), p,
                     enc.levels[std::size_t(l - 1)], raw_xyz,
                     dc.widths[std::size_t(4 - l)], dc.knn_k);
    out.levels.push_back(p);
  }
  out.p0 = g.relu(ad::affine(g, store, "decoder.p0", p, dc.widths[4], true));
  out.seg = g.sigmoid(ad::affine(g, store, "decoder.seg", p, 1, true));
  return out;
}

std::vector<double> seg_labels(const scene::PointCloud& pc,
                               const scene::GroundTruth& gt) {
  std::vector<double> labels(pc.size(), 0.0);
  for (std::size_t i = 0; i < pc.size(); ++i) {
    for (const auto& box : gt.boxes) {
      if (geom::contains(box, pc.xyz(i))) {
        labels[i] = 1.0;
        break;
      }
    }
  }
  return labels;
}

ad::Tensor seg_loss(ad::Graph& g, ad::Tensor seg_probs,
                    const std::vector<double>& labels) {
  return ad::focal_loss(g, seg_probs, labels, 0.25, 2.0);
}

std::string dump_segmentation(const scene::PointCloud& pc,
                              std::span<const double> probs,
                              std::span<const double> labels) {
  if (probs.size() != pc.size() || labels.size() != pc.size())
    throw std::runtime_error("dump_segmentation: length mismatch");
  std::string out;
  char buf[160];
  for (std::size_t i = 0; i < pc.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %g\n",
                  pc.points[i].x, pc.points[i].y, pc.points[i].z, probs[i],
                  labels[i]);
    out += buf;
  }
  return out;
}

}  // namespace v2p::decoder
