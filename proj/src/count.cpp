#include "simco/count.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <tuple>

#include "simco/parallel.hpp"

namespace simco::count {

std::string_view to_string(ClusterMode mode) { return mode == ClusterMode::Seeded ? "seeded" : "unsupervised"; }

ClusterMode mode_from_string(std::string_view name) {
  if (name == "seeded") return ClusterMode::Seeded;
  if (name == "unsupervised") return ClusterMode::Unsupervised;
  throw Error("unknown cluster mode: " + std::string(name));
}

int bind_seed(std::span<const detect::Detection> detections, const BBox& box, double min_iou) {
  int best = -1;
  double best_iou = -1.0;
  for (int i = 0; i < static_cast<int>(detections.size()); ++i) {
    const double v = iou(detections[i].bbox, box);
    if (v > best_iou) {
      best_iou = v;
      best = i;
    }
  }
  return (best >= 0 && best_iou >= min_iou) ? best : -1;
}

Described describe_detections(const RasterImage& image, const shapegen::ImageRecord* record,
                              const embed::EmbeddingNet& net, const PipelineConfig& config) {
  Described out;
  if (config.detector == detect::Source::Oracle) {
    if (!record) throw Error("the oracle detector needs an annotated record");
    out.detections = detect::detect_oracle(*record);
  } else {
    out.detections = detect::detect_blobs(image, config.blob);
  }
  const int patch = static_cast<int>(std::lround(std::sqrt((net.input_dim() - 1) / 3.0)));
  if (detect::feature_dim(patch) != net.input_dim())
    throw Error("model input dim does not correspond to a patch size");
  out.descriptors.reserve(out.detections.size());
  for (const auto& det : out.detections)
    out.descriptors.push_back(net.forward(detect::extract_features(image, det, patch)));
  return out;
}

CountReport run_pipeline(const RasterImage& image, const shapegen::ImageRecord* record,
                         const embed::EmbeddingNet& net, const PipelineConfig& config,
                         std::span<const BBox> seed_boxes, bool fallback_on_inseparable, std::string image_id) {
  CountReport report;
  report.mode = config.mode;
  report.image_id = !image_id.empty() ? std::move(image_id) : (record ? record->id : std::string{});

  Described described = describe_detections(image, record, net, config);
  report.detections = std::move(described.detections);
  const auto& desc = described.descriptors;

  if (config.mode == ClusterMode::Seeded) {
    for (int s = 0; s < static_cast<int>(seed_boxes.size()); ++s) {
      const int d = bind_seed(report.detections, seed_boxes[s], config.seed_min_iou);
      if (d < 0) {
        report.unbound_seeds.push_back(s);
      } else if (std::find(report.seed_detections.begin(), report.seed_detections.end(), d) ==
                 report.seed_detections.end()) {
        report.seed_detections.push_back(d);
      }
    }
  }
  if (report.detections.empty()) return report;
  if (config.mode == ClusterMode::Seeded && report.seed_detections.empty()) return report;

  cluster::ClusterResult result;
  cluster::FilterMode filter;
  if (config.mode == ClusterMode::Seeded) {
    try {
      auto found = cluster::preference_search(desc, report.seed_detections, config.ap, config.grid_steps);
      result = std::move(found.result);
    } catch (cluster::SeedsNotSeparable& e) {
      if (!fallback_on_inseparable) throw;
      report.seeds_not_separable = true;
      result = std::move(e.last_result);
    }
    filter = cluster::Seeded{report.seed_detections};
  } else {
    auto s = cluster::build_similarity(desc, 0.0);
    s.set_preference(config.preference.value_or(s.median_offdiagonal()));
    result = cluster::affinity_propagation(s, config.ap);
    filter = cluster::Unsupervised{config.min_count};
  }
  report.preference = result.preference;

  for (int c : cluster::filter_clusters(result, filter)) {
    ClusterCount cc;
    cc.exemplar = result.exemplars[c];
    cc.members = result.members(c);
    cc.count = static_cast<int>(cc.members.size());
    report.total += cc.count;
    report.clusters.push_back(std::move(cc));
  }
  report.clustering = std::move(result);
  return report;
}

nlohmann::ordered_json to_json(const CountReport& r) {
  nlohmann::ordered_json clusters = nlohmann::ordered_json::array();
  for (const auto& c : r.clusters)
    clusters.push_back({{"exemplar", c.exemplar}, {"members", c.members}, {"count", c.count}});
  nlohmann::ordered_json dets = nlohmann::ordered_json::array();
  for (const auto& d : r.detections) {
    dets.push_back({{"bbox", {d.bbox.x0, d.bbox.y0, d.bbox.x1, d.bbox.y1}},
                    {"score", d.score},
                    {"source", detect::to_string(d.source)}});
  }
  return {{"image_id", r.image_id},
          {"mode", to_string(r.mode)},
          {"preference", r.preference},
          {"total", r.total},
          {"clusters", std::move(clusters)},
          {"seed_detections", r.seed_detections},
          {"unbound_seeds", r.unbound_seeds},
          {"seeds_not_separable", r.seeds_not_separable},
          {"detections", std::move(dets)},
          {"clustering", r.clustering ? cluster::to_json(*r.clustering) : nlohmann::ordered_json()}};
}

// ---------------------------------------------------------------------------
// metrics

namespace {

void check_lengths(std::span<const double> preds, std::span<const double> gts, const char* who) {
  if (preds.size() != gts.size()) throw Error(std::string(who) + ": length mismatch");
  if (preds.empty()) throw Error(std::string(who) + ": no evaluation units");
}

}  // namespace

double mae(std::span<const double> preds, std::span<const double> gts) {
  check_lengths(preds, gts, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += std::abs(preds[i] - gts[i]);
  return s / static_cast<double>(preds.size());
}

double nmae(std::span<const double> preds, std::span<const double> gts) {
  check_lengths(preds, gts, "nmae");
  double err = 0.0, total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    err += std::abs(preds[i] - gts[i]);
    total += gts[i];
  }
  if (!(total > 0.0)) throw Error("nmae: ground-truth counts sum to zero");
  return err / total;
}

double nmae_mean_relative(std::span<const double> preds, std::span<const double> gts) {
  check_lengths(preds, gts, "nmae");
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!(gts[i] > 0.0)) throw Error("nmae: zero ground-truth count in a unit");
    s += std::abs(preds[i] - gts[i]) / gts[i];
  }
  return s / static_cast<double>(preds.size());
}

// ---------------------------------------------------------------------------
// ground-truth matching

std::vector<int> match_detections(std::span<const detect::Detection> detections,
                                  const shapegen::ImageRecord& record, double min_iou) {
  std::vector<std::tuple<double, int, int>> cand;
  for (int d = 0; d < static_cast<int>(detections.size()); ++d) {
    for (int g = 0; g < static_cast<int>(record.instances.size()); ++g) {
      const double v = iou(detections[d].bbox, record.instances[g].bbox);
      if (v >= min_iou) cand.emplace_back(v, d, g);
    }
  }
  std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });
  std::vector<int> det_to_gt(detections.size(), -1);
  std::vector<char> gt_used(record.instances.size(), 0);
  for (const auto& [v, d, g] : cand) {
    if (det_to_gt[d] >= 0 || gt_used[g]) continue;
    det_to_gt[d] = g;
    gt_used[g] = 1;
  }
  return det_to_gt;
}

GtMatch match_clusters_to_gt(const CountReport& report, const shapegen::ImageRecord& record) {
  const int ntypes = static_cast<int>(record.types.size());
  GtMatch out;
  for (int t = 0; t < ntypes; ++t) out.per_type.push_back({t, 0, record.instance_count(t)});
  const auto det_to_gt = match_detections(report.detections, record);
  for (const auto& c : report.clusters) {
    std::vector<int> votes(ntypes, 0);
    bool any = false;
    for (int m : c.members) {
      const int g = det_to_gt.at(m);
      if (g < 0) continue;
      ++votes[record.instances[g].type_index];
      any = true;
    }
    if (!any) {
      out.unattributed += c.count;
      continue;
    }
    const auto best = std::max_element(votes.begin(), votes.end()) - votes.begin();
    out.per_type[best].pred += c.count;
  }
  return out;
}

// ---------------------------------------------------------------------------
// evaluation

MetricSummary eval_dataset(std::span<const shapegen::ImageRecord* const> records, const RasterProvider& rasters,
                           const embed::EmbeddingNet& net, const EvalConfig& config) {
  std::size_t n = records.size();
  if (config.limit > 0) n = std::min<std::size_t>(n, config.limit);
  if (n == 0) throw Error("eval_dataset: no images to evaluate");

  struct PerImage {
    std::vector<EvalRow> rows;
    std::vector<std::string> errors;
  };
  std::vector<PerImage> per(n);
  parallel_for(n, [&](std::size_t i) {
    const auto& rec = *records[i];
    auto& out = per[i];
    std::vector<int> preds(rec.types.size(), 0);
    try {
      const RasterImage raster = rasters(rec);
      std::vector<BBox> seeds;
      if (config.pipeline.mode == ClusterMode::Seeded) {
        for (int t = 0; t < static_cast<int>(rec.types.size()); ++t) {
          for (const auto& inst : rec.instances) {
            if (inst.type_index == t) {
              seeds.push_back(inst.bbox);
              break;
            }
          }
        }
      }
      const CountReport report = run_pipeline(raster, &rec, net, config.pipeline, seeds, true);
      if (report.seeds_not_separable) out.errors.push_back(rec.id + ": seeds not separable; top-of-grid clustering used");
      if (!report.unbound_seeds.empty())
        out.errors.push_back(rec.id + ": " + std::to_string(report.unbound_seeds.size()) + " seed(s) matched no detection");
      const GtMatch match = match_clusters_to_gt(report, rec);
      for (const auto& tc : match.per_type) preds[tc.type_index] = tc.pred;
    } catch (const std::exception& e) {
      out.errors.push_back(rec.id + ": " + e.what());
    }
    for (int t = 0; t < static_cast<int>(rec.types.size()); ++t) {
      const int gt = rec.instance_count(t);
      out.rows.push_back({rec.id, t, preds[t], gt, std::abs(preds[t] - gt)});
    }
  });

  MetricSummary summary;
  for (auto& p : per) {
    summary.rows.insert(summary.rows.end(), p.rows.begin(), p.rows.end());
    summary.errors.insert(summary.errors.end(), p.errors.begin(), p.errors.end());
  }
  summary.n_units = summary.rows.size();
  if (summary.n_units == 0) return summary;
  std::vector<double> pv, gv;
  for (const auto& r : summary.rows) {
    pv.push_back(r.pred);
    gv.push_back(r.gt);
  }
  summary.mae = mae(pv, gv);
  summary.nmae = config.nmae_kind == NmaeKind::SumNormalized ? nmae(pv, gv) : nmae_mean_relative(pv, gv);
  return summary;
}

std::string eval_csv(const MetricSummary& summary) {
  std::string out = "image_id,type_id,pred,gt,abs_err\n";
  for (const auto& r : summary.rows) {
    out += r.image_id + ',' + std::to_string(r.type_id) + ',' + std::to_string(r.pred) + ',' +
           std::to_string(r.gt) + ',' + std::to_string(r.abs_err) + '\n';
  }
  return out;
}

nlohmann::ordered_json to_json(const EvalConfig& c) {
  const auto& p = c.pipeline;
  return {{"detector", detect::to_string(p.detector)},
          {"mode", to_string(p.mode)},
          {"blob", {{"threshold_quantile", p.blob.threshold_quantile}, {"min_area_px", p.blob.min_area_px}}},
          {"ap", {{"damping", p.ap.damping}, {"max_iter", p.ap.max_iter}, {"convergence_iter", p.ap.convergence_iter}}},
          {"grid_steps", p.grid_steps},
          {"min_count", p.min_count},
          {"preference", p.preference ? nlohmann::ordered_json(*p.preference) : nlohmann::ordered_json()},
          {"seed_min_iou", p.seed_min_iou},
          {"nmae", c.nmae_kind == NmaeKind::SumNormalized ? "sum_normalized" : "mean_relative"},
          {"limit", c.limit}};
}

EvalConfig eval_config_from_json(const nlohmann::ordered_json& j) {
  if (!j.is_object()) throw ConfigError("eval config must be a JSON object");
  EvalConfig c;
  const auto known = to_json(c);
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ConfigError("unknown eval config key: " + key);
  auto& p = c.pipeline;
  try {
    if (j.contains("detector")) p.detector = detect::source_from_string(j.at("detector").get<std::string>());
    if (j.contains("mode")) p.mode = mode_from_string(j.at("mode").get<std::string>());
    if (j.contains("blob")) {
      const auto& b = j.at("blob");
      if (b.contains("threshold_quantile")) b.at("threshold_quantile").get_to(p.blob.threshold_quantile);
      if (b.contains("min_area_px")) b.at("min_area_px").get_to(p.blob.min_area_px);
    }
    if (j.contains("ap")) {
      const auto& a = j.at("ap");
      if (a.contains("damping")) a.at("damping").get_to(p.ap.damping);
      if (a.contains("max_iter")) a.at("max_iter").get_to(p.ap.max_iter);
      if (a.contains("convergence_iter")) a.at("convergence_iter").get_to(p.ap.convergence_iter);
    }
    if (j.contains("grid_steps")) j.at("grid_steps").get_to(p.grid_steps);
    if (j.contains("min_count")) j.at("min_count").get_to(p.min_count);
    if (j.contains("preference") && !j.at("preference").is_null()) p.preference = j.at("preference").get<double>();
    if (j.contains("seed_min_iou")) j.at("seed_min_iou").get_to(p.seed_min_iou);
    if (j.contains("nmae")) {
      const auto kind = j.at("nmae").get<std::string>();
      if (kind == "sum_normalized") c.nmae_kind = NmaeKind::SumNormalized;
      else if (kind == "mean_relative") c.nmae_kind = NmaeKind::MeanRelative;
      else throw ConfigError("unknown nmae kind: " + kind);
    }
    if (j.contains("limit")) j.at("limit").get_to(c.limit);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad eval config value: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  p.ap.validate();
  if (p.grid_steps < 1 || p.min_count < 1 || c.limit < 0) throw ConfigError("grid_steps, min_count, limit out of range");
  return c;
}

std::string config_hash(const EvalConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json(config).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

nlohmann::ordered_json summary_json(const MetricSummary& s, const EvalConfig& config) {
  return {{"mae", s.mae}, {"nmae", s.nmae}, {"n_units", s.n_units}, {"config_hash", config_hash(config)}};
}

}  // namespace simco::count
