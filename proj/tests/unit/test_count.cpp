#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "simco/count.hpp"
#include "simco/rng.hpp"

using namespace simco;
using namespace simco::count;
using shapegen::ImageRecord;
using shapegen::ObjectType;
using shapegen::ShapeClass;

namespace {

// Hand-set net whose descriptor is the mean patch color plus the box scale,
// which separates types that differ in color.
embed::EmbeddingNet color_net(int patch = 16) {
  const int in = detect::feature_dim(patch), px = patch * patch;
  embed::EmbeddingNet net(in, 4, embed::kDescriptorDim);
  auto w1 = net.w1();
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < px; ++k) w1[std::size_t(c) * in + 3 * k + c] = 1.0 / px;
  w1[std::size_t(3) * in + in - 1] = 1.0;
  auto w2 = net.w2();
  for (int j = 0; j < 4; ++j) w2[std::size_t(j) * 4 + j] = 4.0;
  net.b2()[4] = 1.0;
  return net;
}

ImageRecord two_type_record() {
  ImageRecord r;
  r.id = "two_types";
  r.width = 400;
  r.height = 300;
  r.background.base = {30, 30, 30};
  r.background.noise_amplitude = 6.0;
  r.types.push_back({ShapeClass::Hexagon, {220, 40, 40}, 0.1, 0.2});
  r.types.push_back({ShapeClass::Triangle, {40, 200, 90}, 0.125, 1.0});
  for (int k = 0; k < 4; ++k) r.instances.push_back({0, {50.0 + 90 * k, 60.0}, {}});
  for (int k = 0; k < 6; ++k) r.instances.push_back({1, {40.0 + 64 * k, 200.0}, {}});
  return r;
}

std::vector<BBox> first_instance_seeds(const ImageRecord& r) {
  std::vector<BBox> seeds;
  for (int t = 0; t < static_cast<int>(r.types.size()); ++t)
    for (const auto& i : r.instances)
      if (i.type_index == t) {
        seeds.push_back(i.bbox);
        break;
      }
  return seeds;
}

}  // namespace

TEST_CASE("seeded oracle pipeline counts each seeded type") {
  auto rec = two_type_record();
  const auto img = shapegen::rasterize(rec);
  const auto net = color_net();
  const auto seeds = first_instance_seeds(rec);
  const auto report = run_pipeline(img, &rec, net, PipelineConfig{}, seeds);
  REQUIRE(report.clusters.size() == 2);
  std::vector<int> counts;
  for (const auto& c : report.clusters) counts.push_back(c.count);
  std::sort(counts.begin(), counts.end());
  CHECK(counts == std::vector<int>{4, 6});
  CHECK(report.total == 10);
  CHECK(report.seed_detections == std::vector<int>{0, 4});
  CHECK(report.unbound_seeds.empty());
  CHECK_FALSE(report.seeds_not_separable);

  const auto match = match_clusters_to_gt(report, rec);
  CHECK(match.per_type[0].pred == 4);
  CHECK(match.per_type[1].pred == 6);
  CHECK(match.unattributed == 0);
}

TEST_CASE("pipeline with zero detections reports zero") {
  ImageRecord rec;
  rec.id = "empty";
  rec.width = rec.height = 64;
  const auto img = shapegen::rasterize(rec);
  const auto net = color_net();
  for (auto mode : {ClusterMode::Seeded, ClusterMode::Unsupervised}) {
    PipelineConfig cfg;
    cfg.mode = mode;
    const auto r = run_pipeline(img, &rec, net, cfg);
    CHECK(r.total == 0);
    CHECK(r.clusters.empty());
    cfg.detector = detect::Source::Blob;
    CHECK(run_pipeline(img, nullptr, net, cfg).total == 0);
  }
}

TEST_CASE("unsupervised pipeline on five identical instances keeps one cluster") {
  ImageRecord rec;
  rec.id = "five";
  rec.width = 320;
  rec.height = 80;
  rec.background.noise_amplitude = 0.0;
  rec.types.push_back({ShapeClass::Rectangle, {250, 200, 20}, 0.2, 0.0});
  for (int k = 0; k < 5; ++k) rec.instances.push_back({0, {32.0 + 64 * k, 40.0}, {}});
  const auto img = shapegen::rasterize(rec);
  PipelineConfig cfg;
  cfg.mode = ClusterMode::Unsupervised;
  const auto r = run_pipeline(img, &rec, color_net(), cfg);
  REQUIRE(r.clusters.size() == 1);
  CHECK(r.clusters[0].count == 5);
  CHECK(r.total == 5);
}

TEST_CASE("report totals equal the kept cluster sizes") {
  shapegen::GeneratorConfig gc;
  gc.width = gc.height = 256;
  const auto net = color_net();
  for (int i = 0; i < 15; ++i) {
    const auto gen = shapegen::generate_image(gc, 3, i);
    for (auto mode : {ClusterMode::Seeded, ClusterMode::Unsupervised}) {
      PipelineConfig cfg;
      cfg.mode = mode;
      const auto r = run_pipeline(gen.raster, &gen.record, net, cfg, first_instance_seeds(gen.record), true);
      int sum = 0;
      for (const auto& c : r.clusters) {
        sum += c.count;
        CHECK(c.count == static_cast<int>(c.members.size()));
        CHECK(c.count >= (mode == ClusterMode::Seeded ? 1 : cfg.min_count));
      }
      CHECK(r.total == sum);
    }
  }
}

TEST_CASE("inseparable seeds propagate unless fallback is requested") {
  ImageRecord rec;
  rec.id = "same";
  rec.width = 300;
  rec.height = 100;
  rec.background.noise_amplitude = 0.0;
  rec.types.push_back({ShapeClass::Rectangle, {250, 200, 20}, 0.2, 0.0});
  for (int k = 0; k < 3; ++k) rec.instances.push_back({0, {50.0 + 100 * k, 50.0}, {}});
  const auto img = shapegen::rasterize(rec);
  const std::vector<BBox> seeds{rec.instances[0].bbox, rec.instances[1].bbox};
  CHECK_THROWS_AS(run_pipeline(img, &rec, color_net(), PipelineConfig{}, seeds), cluster::SeedsNotSeparable);
  const auto r = run_pipeline(img, &rec, color_net(), PipelineConfig{}, seeds, true);
  CHECK(r.seeds_not_separable);
  CHECK(r.total == 3);
}

TEST_CASE("seed binding") {
  const std::vector<detect::Detection> dets{{{0, 0, 9, 9}}, {{20, 20, 29, 29}}, {{0, 0, 9, 9}}};
  CHECK(bind_seed(dets, {0, 0, 9, 9}, 0.3) == 0);
  CHECK(bind_seed(dets, {21, 21, 30, 30}, 0.3) == 1);
  CHECK(bind_seed(dets, {100, 100, 110, 110}, 0.3) == -1);
  CHECK(bind_seed(dets, {0, 0, 19, 19}, 0.3) == -1);  // IoU 0.25
  CHECK(bind_seed({}, {0, 0, 1, 1}, 0.3) == -1);
}

TEST_CASE("metric examples") {
  using V = std::vector<double>;
  CHECK(mae(V{3, 4}, V{3, 4}) == 0.0);
  CHECK(mae(V{5, 10}, V{4, 12}) == 1.5);
  CHECK(nmae(V{47}, V{50}) == doctest::Approx(0.06));
  CHECK(nmae(V{2, 2}, V{2, 2}) == 0.0);
  CHECK(nmae_mean_relative(V{5, 10}, V{4, 12}) == doctest::Approx((0.25 + 2.0 / 12) / 2));
  CHECK_THROWS_AS(mae(V{1, 2}, V{1}), Error);
  CHECK_THROWS_AS(mae(V{}, V{}), Error);
  CHECK_THROWS_AS(nmae(V{1, 2}, V{0, 0}), Error);
  CHECK_THROWS_AS(nmae_mean_relative(V{1, 2}, V{0, 2}), Error);
}

TEST_CASE("metric identities over random fixtures") {
  Rng rng(404);
  for (int trial = 0; trial < 2000; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(0, 19));
    std::vector<double> p(n), g(n);
    for (int i = 0; i < n; ++i) {
      g[i] = static_cast<double>(rng.uniform_int(1, 30));
      p[i] = rng.bernoulli(0.3) ? g[i] : static_cast<double>(rng.uniform_int(0, 40));
    }
    double ref = 0.0, gsum = 0.0;
    bool exact = true;
    for (int i = 0; i < n; ++i) {
      ref += std::abs(p[i] - g[i]);
      gsum += g[i];
      exact &= p[i] == g[i];
    }
    const double m = mae(p, g);
    CHECK(m == doctest::Approx(ref / n).epsilon(1e-12));
    CHECK((m == 0.0) == exact);
    CHECK((nmae(p, g) == 0.0) == exact);
    CHECK(nmae(p, g) == doctest::Approx(m * n / gsum).epsilon(1e-12));
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
    std::vector<double> pp, gg;
    for (int i : order) {
      pp.push_back(p[i]);
      gg.push_back(g[i]);
    }
    CHECK(mae(pp, gg) == doctest::Approx(m).epsilon(1e-12));
  }
}

TEST_CASE("greedy detection matching is one-to-one at IoU 0.5") {
  ImageRecord rec;
  rec.types.push_back({});
  rec.instances = {{0, {}, {0, 0, 9, 9}}, {0, {}, {20, 0, 29, 9}}};
  const std::vector<detect::Detection> dets{{{1, 0, 10, 9}}, {{0, 0, 9, 9}}, {{40, 40, 49, 49}}, {{20, 0, 29, 9}}};
  CHECK(match_detections(dets, rec) == std::vector<int>{-1, 0, -1, 1});
}

TEST_CASE("a cluster merging two types goes to the majority type") {
  ImageRecord rec;
  rec.types = {{ShapeClass::Diamond, {1, 1, 1}, 0.1, 0}, {ShapeClass::Ellipse, {2, 2, 2}, 0.1, 0}};
  CountReport rep;
  for (int k = 0; k < 5; ++k) {
    const BBox b{k * 20, 0, k * 20 + 9, 9};
    rec.instances.push_back({k < 3 ? 0 : 1, {}, b});
    rep.detections.push_back({b});
  }
  rep.clusters.push_back({0, {0, 1, 2, 3, 4}, 5});
  rep.total = 5;
  const auto m = match_clusters_to_gt(rep, rec);
  CHECK(m.per_type[0].pred == 5);
  CHECK(m.per_type[1].pred == 0);
  CHECK(std::abs(m.per_type[0].pred - m.per_type[0].gt) == 2);
  CHECK(std::abs(m.per_type[1].pred - m.per_type[1].gt) == 2);

  // even split goes to the lower type index
  rep.clusters[0] = {0, {2, 3}, 2};
  const auto tie = match_clusters_to_gt(rep, rec);
  CHECK(tie.per_type[0].pred == 2);
  CHECK(tie.per_type[1].pred == 0);
}

TEST_CASE("matching conserves counted totals under random perturbations") {
  Rng rng(8080);
  for (int trial = 0; trial < 500; ++trial) {
    ImageRecord rec;
    const int ntypes = 1 + static_cast<int>(rng.uniform_int(0, 3));
    rec.types.resize(ntypes);
    const int ninst = 2 + static_cast<int>(rng.uniform_int(0, 10));
    for (int i = 0; i < ninst; ++i)
      rec.instances.push_back({static_cast<int>(rng.uniform_int(0, ntypes - 1)), {}, {i * 30, 0, i * 30 + 19, 19}});
    CountReport rep;
    bool all_matched = true;
    for (const auto& inst : rec.instances) {
      if (rng.bernoulli(0.2)) continue;  // missed detection
      const int dx = static_cast<int>(rng.uniform_int(-6, 6));
      rep.detections.push_back({{inst.bbox.x0 + dx, 0, inst.bbox.x1 + dx, 19}});
    }
    const int spurious = static_cast<int>(rng.uniform_int(0, 3));
    for (int s = 0; s < spurious; ++s) rep.detections.push_back({{1000 + 30 * s, 100, 1015 + 30 * s, 115}});
    const int nd = static_cast<int>(rep.detections.size());
    if (nd == 0) continue;
    // random partition into clusters; keep a random subset
    std::map<int, std::vector<int>> groups;
    for (int d = 0; d < nd; ++d) groups[static_cast<int>(rng.uniform_int(0, 3))].push_back(d);
    for (auto& [g, members] : groups) {
      if (rng.bernoulli(0.25)) continue;
      rep.clusters.push_back({members.front(), members, static_cast<int>(members.size())});
      rep.total += static_cast<int>(members.size());
    }
    const auto m = match_clusters_to_gt(rep, rec);
    int preds = 0;
    for (const auto& t : m.per_type) preds += t.pred;
    CHECK(preds + m.unattributed == rep.total);
    if (spurious == 0) {
      const auto det_to_gt = match_detections(rep.detections, rec);
      all_matched = std::all_of(det_to_gt.begin(), det_to_gt.end(), [](int g) { return g >= 0; });
      if (all_matched) CHECK(preds == rep.total);
    }
  }
}

TEST_CASE("evaluation with a separable embedding is exact and deterministic") {
  std::vector<ImageRecord> recs;
  std::map<std::string, RasterImage> rasters;
  for (int k = 0; k < 3; ++k) {
    auto r = two_type_record();
    r.id = "fixture_" + std::to_string(k);
    r.background.noise_seed = k;
    r.instances.resize(r.instances.size() - k);  // 6, 5, 4 of the second type
    rasters[r.id] = shapegen::rasterize(r);
    recs.push_back(r);
  }
  std::vector<const ImageRecord*> ptrs;
  for (const auto& r : recs) ptrs.push_back(&r);
  const RasterProvider provider = [&](const ImageRecord& r) { return rasters.at(r.id); };

  EvalConfig cfg;
  const auto net = color_net();
  const auto a = eval_dataset(ptrs, provider, net, cfg);
  CHECK(a.n_units == 6);
  CHECK(a.mae == 0.0);
  CHECK(a.nmae == 0.0);
  CHECK(a.errors.empty());
  const auto b = eval_dataset(ptrs, provider, net, cfg);
  CHECK(eval_csv(a) == eval_csv(b));
  CHECK(eval_csv(a).rfind("image_id,type_id,pred,gt,abs_err\nfixture_0,0,4,4,0\n", 0) == 0);

  const auto s = summary_json(a, cfg);
  CHECK(s.contains("mae"));
  CHECK(s.contains("nmae"));
  CHECK(s.at("n_units") == 6);
  CHECK(s.at("config_hash") == config_hash(cfg));

  cfg.limit = 1;
  CHECK(eval_dataset(ptrs, provider, net, cfg).n_units == 2);
  CHECK_THROWS_AS(eval_dataset(std::span<const ImageRecord* const>{}, provider, net, EvalConfig{}), Error);
}

TEST_CASE("evaluation records per-image failures and keeps going") {
  auto rec = two_type_record();
  const auto raster = shapegen::rasterize(rec);
  auto broken = rec;
  broken.id = "broken";
  std::vector<const ImageRecord*> ptrs{&rec, &broken};
  const RasterProvider provider = [&](const ImageRecord& r) {
    if (r.id == "broken") throw IoError("cannot read broken.ppm");
    return raster;
  };
  const auto s = eval_dataset(ptrs, provider, color_net(), EvalConfig{});
  CHECK(s.n_units == 4);
  REQUIRE(s.errors.size() == 1);
  CHECK(s.errors[0].find("broken") != std::string::npos);
  CHECK(s.rows[2].pred == 0);
  CHECK(s.rows[3].pred == 0);
}

TEST_CASE("eval config JSON round-trip and hashing") {
  EvalConfig c;
  c.pipeline.detector = detect::Source::Blob;
  c.pipeline.mode = ClusterMode::Unsupervised;
  c.pipeline.preference = -0.25;
  c.nmae_kind = NmaeKind::MeanRelative;
  c.limit = 7;
  const auto back = eval_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(config_hash(back) == config_hash(c));
  CHECK(config_hash(c) != config_hash(EvalConfig{}));
  CHECK(config_hash(c).size() == 16);
  CHECK_THROWS_AS(eval_config_from_json({{"unknown", 1}}), ConfigError);
  CHECK_THROWS_AS(eval_config_from_json({{"ap", {{"damping", 1.5}}}}), ConfigError);
  CHECK_THROWS_AS(eval_config_from_json({{"mode", "sometimes"}}), ConfigError);
}

TEST_CASE("published reference constants are recorded") {
  CHECK(reference::kCellsMae == 12.0);
  CHECK(reference::kCellsNmae == 0.07);
  CHECK(reference::kRepTileMae == 8.66);
  CHECK(reference::kRepTileNmae == 0.086);
}
