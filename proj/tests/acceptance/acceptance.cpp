// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "simco/cli.hpp"
#include "simco/cluster.hpp"
#include "simco/count.hpp"
#include "simco/embed.hpp"
#include "simco/manifest.hpp"
#include "simco/parallel.hpp"
#include "simco/rng.hpp"
#include "simco/shapegen.hpp"

namespace fs = std::filesystem;
using namespace simco;
using Clock = std::chrono::steady_clock;

namespace {

// Declared tolerances.
constexpr double kGradTol = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr int kGradPairs = 20;
constexpr double kGradSeconds = 60.0;
constexpr double kRecallMin = 0.9;
constexpr double kTrainMinutes = 30.0;
constexpr int kApTrials = 200;
constexpr double kApRatio = 0.95;
constexpr double kApPassFraction = 0.9;
constexpr double kApSeconds = 120.0;
constexpr int kHeldOutImages = 100;
constexpr double kSeedSuccess = 0.95;
constexpr double kOracleNmae = 0.15;
constexpr double kOracleMae = 1.5;
constexpr double kBlobNmae = 0.25;
constexpr int kMetricFixtures = 10000;
constexpr std::uint64_t kDatasetSeed = 1;

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------

double batch_loss(const embed::EmbeddingNet& net, const embed::TripletBatch& batch) {
  std::vector<embed::Descriptor> d;
  for (const auto* f : batch.features) d.push_back(net.forward(*f));
  return embed::triplet_loss(d, batch.labels, batch.alpha).value;
}

void gradient_check() {
  const auto t0 = Clock::now();
  shapegen::GeneratorConfig gc;
  gc.width = gc.height = 128;
  gc.noise_cell = 16;
  constexpr int patch = 4;
  Rng rng(314);
  double worst = 0.0;
  int passed = 0;
  for (int pair = 0; pair < kGradPairs; ++pair) {
    // real oracle features from one image plus random ones, mixed labels
    const auto gen = shapegen::generate_image(gc, 900, pair);
    auto image = embed::make_training_image(gen.record, gen.raster, patch);
    std::vector<int> labels = embed::type_labels(image.types);
    if (image.features.size() > 8) {
      image.features.resize(8);
      labels.resize(8);
    }
    for (int extra = 0; extra < 3; ++extra) {
      detect::FeatureVector f;
      f.patch = patch;
      f.values.resize(detect::feature_dim(patch));
      for (double& v : f.values) v = rng.uniform();
      image.features.push_back(f);
      labels.push_back(static_cast<int>(rng.uniform_int(0, 2)));
    }
    embed::TripletBatch batch;
    batch.alpha = rng.uniform(0.2, 1.0);
    for (std::size_t i = 0; i < image.features.size(); ++i) batch.features.push_back(&image.features[i]);
    batch.labels = labels;

    auto net = embed::EmbeddingNet::initialized(detect::feature_dim(patch), 24, embed::kDescriptorDim, 7000 + pair);
    const auto analytic = embed::loss_gradient(net, batch).grad;
    auto p = net.params();
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double keep = p[i];
      p[i] = keep + kGradStep;
      const double up = batch_loss(net, batch);
      p[i] = keep - kGradStep;
      const double down = batch_loss(net, batch);
      p[i] = keep;
      const double numeric = (up - down) / (2 * kGradStep);
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      na += analytic[i] * analytic[i];
      nn += numeric * numeric;
    }
    const double scale = std::sqrt(na) + std::sqrt(nn);
    const double rel = scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
    worst = std::max(worst, rel);
    if (rel < kGradTol) ++passed;
  }
  const double secs = seconds_since(t0);
  report("gradient_fd", passed == kGradPairs && secs < kGradSeconds,
         fmt("%d/%d pairs below %.0e (worst %.3e), %.1f s", passed, kGradPairs, kGradTol, worst, secs));
}

// ---------------------------------------------------------------------------

struct Trained {
  shapegen::DatasetManifest manifest;
  embed::EmbeddingNet net;
  std::vector<const shapegen::ImageRecord*> held_out;
};

Trained train_desk_model(const fs::path& work) {
  Trained t;
  const shapegen::GeneratorConfig gc;  // 2000 images, 512 x 512
  t.manifest = shapegen::build_manifest(gc, kDatasetSeed);
  const embed::TrainConfig tc;          // 30 epochs, lr 0.01, momentum 0.9, B = 4
  const auto train_records = t.manifest.split(shapegen::Split::Train);

  const auto t0 = Clock::now();
  std::vector<embed::TrainingImage> images(train_records.size());
  parallel_for(train_records.size(), [&](std::size_t i) {
    const int index = static_cast<int>(train_records[i] - t.manifest.images.data());
    const auto gen = shapegen::generate_image(gc, kDatasetSeed, index);
    images[i] = embed::make_training_image(gen.record, gen.raster, tc.patch);
  });
  t.net = embed::EmbeddingNet::initialized(detect::feature_dim(tc.patch), tc.hidden, embed::kDescriptorDim, tc.seed);
  const auto result = embed::train(t.net, images, tc);
  const double minutes = seconds_since(t0) / 60.0;

  std::ofstream(work / "desk_loss.csv") << embed::loss_curve_csv(result.epoch_loss);
  embed::ModelFile mf{t.net, tc.alpha, tc};
  embed::save_model(work / "desk_model.json", mf);
  std::printf("info: trained on %zu images, loss %.4f -> %.4f, %.1f min\n", images.size(), result.epoch_loss.front(),
              result.epoch_loss.back(), minutes);
  report("training_budget", minutes < kTrainMinutes && result.epoch_loss.back() < result.epoch_loss.front(),
         fmt("%.1f min (< %.0f), epoch loss %.4f -> %.4f", minutes, kTrainMinutes, result.epoch_loss.front(),
             result.epoch_loss.back()));
  t.held_out = t.manifest.split(shapegen::Split::Test);
  return t;
}

RasterImage held_out_raster(const Trained& t, const shapegen::ImageRecord& rec) {
  const int index = static_cast<int>(&rec - t.manifest.images.data());
  return shapegen::generate_image(t.manifest.config, kDatasetSeed, index).raster;
}

void embedding_separation(const Trained& t) {
  struct PerImage {
    int queries = 0, hits = 0;
    bool multi = false, separated = true;
    double intra = 0.0, inter = 0.0;
  };
  std::vector<PerImage> per(t.held_out.size());
  parallel_for(t.held_out.size(), [&](std::size_t k) {
    const auto& rec = *t.held_out[k];
    const auto raster = held_out_raster(t, rec);
    const auto dets = detect::detect_oracle(rec);
    std::vector<embed::Descriptor> d;
    for (const auto& det : dets) d.push_back(t.net.forward(detect::extract_features(raster, det)));
    const int n = static_cast<int>(d.size());
    auto type_of = [&](int i) { return rec.instances[i].type_index; };
    auto& out = per[k];
    double si = 0, se = 0;
    int ni = 0, ne = 0;
    for (int i = 0; i < n; ++i) {
      int best = -1;
      double bd = std::numeric_limits<double>::infinity();
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        const double dist = embed::distance(d[i], d[j]);
        if (dist < bd) {
          bd = dist;
          best = j;
        }
        if (j > i) {
          if (type_of(i) == type_of(j)) si += dist, ++ni;
          else se += dist, ++ne;
        }
      }
      ++out.queries;
      if (best >= 0 && type_of(best) == type_of(i)) ++out.hits;
    }
    out.multi = rec.types.size() > 1;
    if (out.multi && ni > 0 && ne > 0) {
      out.intra = si / ni;
      out.inter = se / ne;
      out.separated = out.intra < out.inter;
    }
  });
  int q = 0, h = 0, multi = 0, separated = 0;
  for (const auto& p : per) {
    q += p.queries;
    h += p.hits;
    if (p.multi) {
      ++multi;
      separated += p.separated;
    }
  }
  const double recall = q ? double(h) / q : 0.0;
  {
    // informational: nearest neighbour over the pooled held-out set, where
    // another image's copy of an equal ObjectType also counts as a hit
    std::vector<embed::Descriptor> all;
    std::vector<shapegen::ObjectType> types;
    for (const auto* rec : t.held_out) {
      const auto raster = held_out_raster(t, *rec);
      for (const auto& inst : rec->instances) {
        all.push_back(t.net.forward(detect::extract_features(raster, {inst.bbox})));
        types.push_back(rec->types[inst.type_index]);
      }
    }
    std::vector<int> hit(all.size(), 0);
    parallel_for(all.size(), [&](std::size_t i) {
      std::size_t best = i;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < all.size(); ++j) {
        if (j == i) continue;
        const double dist = embed::distance(all[i], all[j]);
        if (dist < bd) bd = dist, best = j;
      }
      hit[i] = best != i && types[best] == types[i];
    });
    std::printf("info: pooled cross-image recall@1 %.4f over %zu detections\n",
                double(std::accumulate(hit.begin(), hit.end(), 0)) / all.size(), all.size());
  }
  report("embedding_separation", recall >= kRecallMin && separated == multi,
         fmt("recall@1 %.4f (>= %.2f) over %d held-out detections; intra < inter on %d/%d multi-type images",
             recall, kRecallMin, q, separated, multi));
}

// ---------------------------------------------------------------------------

void clustering_oracle() {
  const auto t0 = Clock::now();
  Rng rng(2718);
  int good = 0;
  double worst = 0.0;
  for (int trial = 0; trial < kApTrials; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(0, 6));
    const int dim = 2 + static_cast<int>(rng.uniform_int(0, 6));
    std::vector<embed::Descriptor> d(n);
    for (auto& x : d) {
      x.values.resize(dim);
      double s = 0.0;
      for (double& v : x.values) s += (v = rng.uniform(-1.0, 1.0)) * v;
      for (double& v : x.values) v /= std::sqrt(s);
    }
    auto s = cluster::build_similarity(d, 0.0);
    s.set_preference(rng.uniform(s.min_offdiagonal(), s.max_offdiagonal()));
    const auto r = cluster::affinity_propagation(s);
    cluster::check_partition(r, n);
    double opt = -std::numeric_limits<double>::infinity();
    for (unsigned mask = 1; mask < (1u << n); ++mask) {
      std::vector<int> ex;
      for (int i = 0; i < n; ++i)
        if (mask & (1u << i)) ex.push_back(i);
      opt = std::max(opt, cluster::exemplar_objective(s, ex));
    }
    const double got = cluster::exemplar_objective(s, r.exemplars);
    // objective values are <= 0 here, so "within 5% of the optimum" reads opt - got <= 0.05 |opt|
    const double gap = opt == 0.0 ? (got == 0.0 ? 0.0 : 1.0) : (opt - got) / std::abs(opt);
    worst = std::max(worst, gap);
    if (gap <= 1.0 - kApRatio + 1e-12) ++good;
  }
  const double secs = seconds_since(t0);
  const double frac = double(good) / kApTrials;
  report("clustering_oracle", frac >= kApPassFraction && secs < kApSeconds,
         fmt("%d/%d trials within %.0f%% of the exhaustive optimum (need %.0f%%), worst gap %.3f, %.1f s", good,
             kApTrials, 100 * (1 - kApRatio), 100 * kApPassFraction, worst, secs));
}

// ---------------------------------------------------------------------------

std::vector<const shapegen::ImageRecord*> multi_type_held_out(const Trained& t) {
  std::vector<const shapegen::ImageRecord*> out;
  for (const auto* r : t.held_out)
    if (r->types.size() > 1 && static_cast<int>(out.size()) < kHeldOutImages) out.push_back(r);
  return out;
}

void seed_protocol(const Trained& t) {
  const auto images = multi_type_held_out(t);
  std::vector<int> status(images.size(), 0);  // 1 success, 2 postcondition violated
  parallel_for(images.size(), [&](std::size_t k) {
    const auto& rec = *images[k];
    const auto raster = held_out_raster(t, rec);
    std::vector<embed::Descriptor> d;
    for (const auto& det : detect::detect_oracle(rec)) d.push_back(t.net.forward(detect::extract_features(raster, det)));
    std::vector<int> seeds;
    for (int ty = 0; ty < static_cast<int>(rec.types.size()); ++ty)
      for (int i = 0; i < static_cast<int>(rec.instances.size()); ++i)
        if (rec.instances[i].type_index == ty) {
          seeds.push_back(i);
          break;
        }
    try {
      const auto r = cluster::preference_search(d, seeds);
      status[k] = cluster::seeds_separated(r.result, seeds) ? 1 : 2;
    } catch (const cluster::SeedsNotSeparable&) {
    }
  });
  const int ok = static_cast<int>(std::count(status.begin(), status.end(), 1));
  const int broken = static_cast<int>(std::count(status.begin(), status.end(), 2));
  const double frac = images.empty() ? 0.0 : double(ok) / images.size();
  report("seed_protocol", images.size() == kHeldOutImages && frac >= kSeedSuccess && broken == 0,
         fmt("%d/%zu multi-type images separated (need %.0f%%), %d postcondition violations", ok, images.size(),
             100 * kSeedSuccess, broken));
}

void end_to_end(const Trained& t, const fs::path& work) {
  std::vector<const shapegen::ImageRecord*> images(t.held_out.begin(),
                                                   t.held_out.begin() + std::min<std::size_t>(kHeldOutImages, t.held_out.size()));
  const count::RasterProvider provider = [&](const shapegen::ImageRecord& r) { return held_out_raster(t, r); };
  std::vector<int> exact(images.size(), 0), blobs(images.size(), 0), gts(images.size(), 0);
  parallel_for(images.size(), [&](std::size_t k) {
    const auto found = detect::detect_blobs(provider(*images[k]));
    blobs[k] = static_cast<int>(found.size());
    gts[k] = static_cast<int>(images[k]->instances.size());
    for (const auto& inst : images[k]->instances)
      for (const auto& b : found) exact[k] += b.bbox == inst.bbox;
  });
  std::printf("info: blob detector found %d boxes for %d instances; %d identical to the annotated box\n",
              std::accumulate(blobs.begin(), blobs.end(), 0), std::accumulate(gts.begin(), gts.end(), 0),
              std::accumulate(exact.begin(), exact.end(), 0));
  count::EvalConfig oracle;
  const auto so = count::eval_dataset(images, provider, t.net, oracle);
  std::ofstream(work / "eval_oracle.csv") << count::eval_csv(so);
  count::EvalConfig blob;
  blob.pipeline.detector = detect::Source::Blob;
  const auto sb = count::eval_dataset(images, provider, t.net, blob);
  std::ofstream(work / "eval_blob.csv") << count::eval_csv(sb);
  report("end_to_end_oracle", so.nmae <= kOracleNmae && so.mae <= kOracleMae,
         fmt("seeded oracle on %zu images: NMAE %.4f (<= %.2f), MAE %.4f (<= %.1f) over %zu units, %zu diagnostics",
             images.size(), so.nmae, kOracleNmae, so.mae, kOracleMae, so.n_units, so.errors.size()));
  report("end_to_end_blob", sb.nmae <= kBlobNmae,
         fmt("seeded blob on %zu images: NMAE %.4f (<= %.2f), MAE %.4f over %zu units, %zu diagnostics",
             images.size(), sb.nmae, kBlobNmae, sb.mae, sb.n_units, sb.errors.size()));
}

// ---------------------------------------------------------------------------

int run_cli(std::vector<std::string> args) {
  std::vector<const char*> argv{"simco"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

void determinism(const fs::path& work) {
  const fs::path dir = work / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "gen.json") << R"({"num_images": 60, "width": 256, "height": 256})";
  std::ofstream(dir / "train.json") << R"({"epochs": 3})";
  bool ok = true;
  std::string detail;
  for (const char* run : {"a", "b"}) {
    const fs::path r = dir / run;
    ok &= run_cli({"generate", "--config", (dir / "gen.json").string(), "--seed", "11", "--out", (r / "data").string()}) == 0;
    ok &= run_cli({"train", "--config", (dir / "train.json").string(), "--data", (r / "data").string(), "--seed", "5",
                   "--out", (r / "model").string()}) == 0;
    ok &= run_cli({"eval", "--data", (r / "data").string(), "--model", (r / "model" / "model.json").string(), "--out",
                   (r / "eval").string()}) == 0;
  }
  if (!ok) detail = "a command failed; ";
  auto same = [&](const fs::path& rel) {
    const bool eq = fs::exists(dir / "a" / rel) && slurp(dir / "a" / rel) == slurp(dir / "b" / rel);
    if (!eq) detail += rel.string() + " differs; ";
    return eq;
  };
  ok &= same("data/manifest.json");
  ok &= same("data/img_000000.ppm");
  ok &= same("data/img_000059.ppm");
  ok &= same("model/model.json");
  ok &= same("model/loss.csv");
  ok &= same("eval/eval.csv");
  ok &= same("eval/summary.json");
  report("determinism", ok, ok ? "manifest, rasters, model, loss curve, eval CSV and summary byte-identical" : detail);
}

void metric_algebra() {
  Rng rng(161803);
  int violations = 0;
  for (int fixture = 0; fixture < kMetricFixtures; ++fixture) {
    const int n = 1 + static_cast<int>(rng.uniform_int(0, 29));
    std::vector<double> p(n), g(n);
    bool exact = true;
    double gsum = 0.0;
    for (int i = 0; i < n; ++i) {
      g[i] = static_cast<double>(rng.uniform_int(1, 60));
      p[i] = rng.bernoulli(0.5) ? g[i] : static_cast<double>(rng.uniform_int(0, 80));
      exact &= p[i] == g[i];
      gsum += g[i];
    }
    if (rng.bernoulli(0.1)) {
      p = g;
      exact = true;
    }
    const double m = count::mae(p, g), nm = count::nmae(p, g);
    bool ok = ((m == 0.0) == exact) && ((nm == 0.0) == exact);
    ok &= std::abs(nm - m * n / gsum) <= 1e-12 * std::max(1.0, nm);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
    std::vector<double> pp, gg;
    for (int i : order) pp.push_back(p[i]), gg.push_back(g[i]);
    ok &= std::abs(count::mae(pp, gg) - m) <= 1e-12 * std::max(1.0, m);
    ok &= std::abs(count::nmae(pp, gg) - nm) <= 1e-12 * std::max(1.0, nm);
    if (!ok) ++violations;
  }
  report("metric_algebra", violations == 0,
         fmt("%d fixtures: zero iff exact, permutation invariance, nmae = mae*n/sum(gt); %d violations",
             kMetricFixtures, violations));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"simco acceptance suite"};
  std::string work = "acceptance_work";
  app.add_option("--work", work, "scratch directory");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  try {
    gradient_check();
    clustering_oracle();
    metric_algebra();
    determinism(work);
    const Trained trained = train_desk_model(work);
    embedding_separation(trained);
    seed_protocol(trained);
    end_to_end(trained, work);
  } catch (const std::exception& e) {
    report("suite", false, std::string("aborted: ") + e.what());
  }
  std::printf("%s: %d criterion line(s) failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
