#include "simco/embed.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "simco/rng.hpp"

namespace simco::embed {

double Descriptor::norm() const {
  double s = 0.0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

double distance(const Descriptor& a, const Descriptor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    s += d * d;
  }
  return std::sqrt(s);
}

EmbeddingNet::EmbeddingNet(int input_dim, int hidden_dim, int output_dim)
    : input_(input_dim), hidden_(hidden_dim), output_(output_dim) {
  if (input_dim < 1 || hidden_dim < 1 || output_dim < 1) throw Error("EmbeddingNet: dimensions must be >= 1");
  params_.assign(w1_size() + hidden_ + w2_size() + output_, 0.0);
}

EmbeddingNet EmbeddingNet::initialized(int input_dim, int hidden_dim, int output_dim, std::uint64_t seed) {
  EmbeddingNet net(input_dim, hidden_dim, output_dim);
  Rng rng(seed);
  const double l1 = std::sqrt(6.0 / (input_dim + hidden_dim));
  const double l2 = std::sqrt(6.0 / (hidden_dim + output_dim));
  for (double& w : net.w1()) w = rng.uniform(-l1, l1);
  for (double& w : net.w2()) w = rng.uniform(-l2, l2);
  return net;
}

namespace {

struct ForwardCache {
  std::vector<double> pre;     // hidden pre-activation
  std::vector<double> hidden;  // after ReLU
  std::vector<double> z;       // output before normalization (after degenerate guard)
  double norm = 0.0;
};

Descriptor forward_cached(const EmbeddingNet& net, std::span<const double> x, ForwardCache& c) {
  if (static_cast<int>(x.size()) != net.input_dim())
    throw Error("forward: feature length " + std::to_string(x.size()) + " does not match input dim " +
                std::to_string(net.input_dim()));
  const int in = net.input_dim(), hid = net.hidden_dim(), out = net.output_dim();
  const auto w1 = net.w1(), b1 = net.b1(), w2 = net.w2(), b2 = net.b2();
  c.pre.assign(hid, 0.0);
  c.hidden.assign(hid, 0.0);
  for (int j = 0; j < hid; ++j) {
    const double* row = &w1[std::size_t(j) * in];
    double s = b1[j];
    for (int i = 0; i < in; ++i) s += row[i] * x[i];
    c.pre[j] = s;
    c.hidden[j] = s > 0.0 ? s : 0.0;
  }
  c.z.assign(out, 0.0);
  double sq = 0.0;
  for (int k = 0; k < out; ++k) {
    const double* row = &w2[std::size_t(k) * hid];
    double s = b2[k];
    for (int j = 0; j < hid; ++j) s += row[j] * c.hidden[j];
    c.z[k] = s;
    sq += s * s;
  }
  if (std::sqrt(sq) < kDegenerateNorm) {
    c.z[0] += kDegenerateNorm;
    sq = 0.0;
    for (double v : c.z) sq += v * v;
  }
  c.norm = std::sqrt(sq);
  Descriptor d;
  d.values.resize(out);
  for (int k = 0; k < out; ++k) d.values[k] = c.z[k] / c.norm;
  return d;
}

bool has_valid_triplet(std::span<const int> labels) {
  std::map<int, std::size_t> counts;
  for (int l : labels) ++counts[l];
  if (counts.size() < 2) return false;
  for (const auto& [_, n] : counts)
    if (n >= 2) return true;
  return false;
}

TripletLoss triplet_impl(std::span<const Descriptor> desc, std::span<const int> labels, double alpha,
                         std::vector<std::vector<double>>* grads) {
  if (desc.size() != labels.size()) throw Error("triplet_loss: descriptor/label count mismatch");
  if (!(alpha > 0.0)) throw Error("triplet_loss: margin must be positive");
  const std::size_t n = desc.size();
  TripletLoss res;
  if (grads) {
    grads->assign(n, std::vector<double>(n ? desc[0].values.size() : 0, 0.0));
  }
  if (!has_valid_triplet(labels)) {
    res.degenerate = true;
    return res;
  }

  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) dist[i * n + j] = dist[j * n + i] = distance(desc[i], desc[j]);

  // coefficient of each pair's distance gradient: +1 per active (a,p), -1 per active (a,n)
  std::vector<double> coef(grads ? n * n : 0, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t p = 0; p < n; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      const double dap = dist[a * n + p];
      for (std::size_t q = 0; q < n; ++q) {
        if (labels[q] == labels[a]) continue;
        ++res.triplets;
        const double m = dap - dist[a * n + q] + alpha;
        if (m > 0.0) {
          res.value += m;
          ++res.active;
          if (grads) {
            coef[a * n + p] += 1.0;
            coef[a * n + q] -= 1.0;
          }
        }
      }
    }
  }
  if (!grads) return res;

  // d|x_a - x_b| / d x_a = (x_a - x_b) / |x_a - x_b|, and the negation for x_b
  const std::size_t dim = desc[0].values.size();
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      const double c = coef[a * n + b];
      const double dab = dist[a * n + b];
      if (c == 0.0 || dab == 0.0) continue;
      const double s = c / dab;
      auto& ga = (*grads)[a];
      auto& gb = (*grads)[b];
      for (std::size_t k = 0; k < dim; ++k) {
        const double u = s * (desc[a].values[k] - desc[b].values[k]);
        ga[k] += u;
        gb[k] -= u;
      }
    }
  }
  return res;
}

}  // namespace

Descriptor EmbeddingNet::forward(std::span<const double> input) const {
  ForwardCache cache;
  return forward_cached(*this, input, cache);
}

TripletLoss triplet_loss(std::span<const Descriptor> descriptors, std::span<const int> labels, double alpha) {
  return triplet_impl(descriptors, labels, alpha, nullptr);
}

TripletLoss triplet_loss_with_grad(std::span<const Descriptor> descriptors, std::span<const int> labels,
                                   double alpha, std::vector<std::vector<double>>& grads) {
  return triplet_impl(descriptors, labels, alpha, &grads);
}

PairSets mine_pairs(std::span<const int> labels) {
  PairSets out;
  const int n = static_cast<int>(labels.size());
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      if (a == b) continue;
      (labels[a] == labels[b] ? out.positives : out.negatives).emplace_back(a, b);
    }
  }
  return out;
}

std::vector<int> type_labels(std::span<const shapegen::ObjectType> types) {
  auto less = [](const shapegen::ObjectType& a, const shapegen::ObjectType& b) { return shapegen::type_less(a, b); };
  std::map<shapegen::ObjectType, int, decltype(less)> ids(less);
  std::vector<int> out;
  out.reserve(types.size());
  for (const auto& t : types) {
    auto [it, _] = ids.emplace(t, static_cast<int>(ids.size()));
    out.push_back(it->second);
  }
  return out;
}

LossGradient loss_gradient(const EmbeddingNet& net, const TripletBatch& batch) {
  const std::size_t n = batch.features.size();
  std::vector<ForwardCache> caches(n);
  std::vector<Descriptor> desc(n);
  for (std::size_t i = 0; i < n; ++i) desc[i] = forward_cached(net, batch.features[i]->values, caches[i]);

  LossGradient out;
  std::vector<std::vector<double>> dd;
  out.loss = triplet_loss_with_grad(desc, batch.labels, batch.alpha, dd);
  out.grad.assign(net.params().size(), 0.0);
  if (out.loss.active == 0) return out;

  const int in = net.input_dim(), hid = net.hidden_dim(), dim = net.output_dim();
  const std::size_t off_b1 = std::size_t(hid) * in;
  const std::size_t off_w2 = off_b1 + hid;
  const std::size_t off_b2 = off_w2 + std::size_t(dim) * hid;
  const auto w2 = net.w2();
  std::vector<double> dz(dim), dpre(hid);

  for (std::size_t s = 0; s < n; ++s) {
    const auto& g = dd[s];
    const auto& c = caches[s];
    const auto& d = desc[s].values;
    double dot = 0.0;
    for (int k = 0; k < dim; ++k) dot += d[k] * g[k];
    bool any = false;
    for (int k = 0; k < dim; ++k) {
      // d(z/|z|)/dz applied to g: (g - d (d.g)) / |z|
      dz[k] = (g[k] - d[k] * dot) / c.norm;
      any |= dz[k] != 0.0;
    }
    if (!any) continue;

    std::fill(dpre.begin(), dpre.end(), 0.0);
    for (int k = 0; k < dim; ++k) {
      const double* row = &w2[std::size_t(k) * hid];
      double* grow = &out.grad[off_w2 + std::size_t(k) * hid];
      for (int j = 0; j < hid; ++j) {
        grow[j] += dz[k] * c.hidden[j];
        dpre[j] += row[j] * dz[k];
      }
      out.grad[off_b2 + k] += dz[k];
    }
    const auto& x = batch.features[s]->values;
    for (int j = 0; j < hid; ++j) {
      if (c.pre[j] <= 0.0) continue;
      const double gj = dpre[j];
      double* grow = &out.grad[std::size_t(j) * in];
      for (int i = 0; i < in; ++i) grow[i] += gj * x[i];
      out.grad[off_b1 + j] += gj;
    }
  }
  return out;
}

TrainingImage make_training_image(const shapegen::ImageRecord& record, const RasterImage& raster, int patch) {
  TrainingImage img;
  img.id = record.id;
  for (const auto& inst : record.instances) {
    detect::Detection det{inst.bbox, 1.0, detect::Source::Oracle};
    img.features.push_back(detect::extract_features(raster, det, patch));
    img.types.push_back(record.types.at(inst.type_index));
  }
  return img;
}

TrainResult train(EmbeddingNet& net, std::span<const TrainingImage> images, const TrainConfig& config) {
  if (images.empty()) throw Error("train: empty train split");
  if (config.batch_images < 1) throw Error("train: batch_images must be >= 1");
  if (static_cast<int>(images.size()) < config.batch_images)
    throw Error("train: train split has fewer images than batch_images");
  if (config.epochs < 0) throw Error("train: epochs must be >= 0");

  Rng rng(config.seed);
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> velocity(net.params().size(), 0.0);
  TrainResult result;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_images) {
      TripletBatch batch;
      batch.alpha = config.alpha;
      std::vector<shapegen::ObjectType> types;
      const std::size_t stop = std::min(order.size(), start + config.batch_images);
      for (std::size_t b = start; b < stop; ++b) {
        const auto& img = images[order[b]];
        for (std::size_t k = 0; k < img.features.size(); ++k) {
          batch.features.push_back(&img.features[k]);
          types.push_back(img.types[k]);
        }
      }
      if (batch.features.empty()) continue;
      batch.labels = type_labels(types);
      const LossGradient lg = loss_gradient(net, batch);
      const double step = config.lr / static_cast<double>(std::max<std::size_t>(lg.loss.active, 1));
      auto params = net.params();
      for (std::size_t p = 0; p < params.size(); ++p) {
        velocity[p] = config.momentum * velocity[p] - step * lg.grad[p];
        params[p] += velocity[p];
      }
      loss_sum += lg.loss.value;
      ++batches;
    }
    result.epoch_loss.push_back(batches ? loss_sum / batches : 0.0);
  }
  return result;
}

// ---------------------------------------------------------------------------
// model file

nlohmann::ordered_json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},       {"momentum", c.momentum}, {"epochs", c.epochs}, {"batch_images", c.batch_images},
          {"alpha", c.alpha}, {"seed", c.seed},         {"hidden", c.hidden}, {"patch", c.patch}};
}

TrainConfig train_config_from_json(const nlohmann::ordered_json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c;
  const auto known = to_json(c);
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ConfigError("unknown train config key: " + key);
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  try {
    get("lr", c.lr);
    get("momentum", c.momentum);
    get("epochs", c.epochs);
    get("batch_images", c.batch_images);
    get("alpha", c.alpha);
    get("seed", c.seed);
    get("hidden", c.hidden);
    get("patch", c.patch);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad train config value: ") + e.what());
  }
  if (!(c.alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (c.lr < 0.0 || c.momentum < 0.0 || c.momentum >= 1.0) throw ConfigError("need lr >= 0 and momentum in [0,1)");
  if (c.epochs < 0 || c.batch_images < 1 || c.hidden < 1 || c.patch < 1)
    throw ConfigError("epochs, batch_images, hidden, patch out of range");
  return c;
}

nlohmann::ordered_json to_json(const ModelFile& m) {
  const auto& net = m.net;
  auto arr = [](std::span<const double> s) { return nlohmann::ordered_json(std::vector<double>(s.begin(), s.end())); };
  return {{"version", kModelVersion},
          {"dims", {net.input_dim(), net.hidden_dim(), net.output_dim()}},
          {"weights", {arr(net.w1()), arr(net.w2())}},
          {"biases", {arr(net.b1()), arr(net.b2())}},
          {"alpha", m.alpha},
          {"train_config", to_json(m.train_config)}};
}

ModelFile model_from_json(const nlohmann::ordered_json& j) {
  try {
    if (j.at("version").get<int>() != kModelVersion)
      throw Error("unsupported model version " + j.at("version").dump());
    const auto dims = j.at("dims").get<std::vector<int>>();
    if (dims.size() != 3) throw Error("model dims must have 3 entries");
    ModelFile m;
    m.net = EmbeddingNet(dims[0], dims[1], dims[2]);
    auto fill = [](std::span<double> dst, const nlohmann::ordered_json& src, const char* what) {
      const auto v = src.get<std::vector<double>>();
      if (v.size() != dst.size()) throw Error(std::string("model ") + what + " has wrong size");
      std::copy(v.begin(), v.end(), dst.begin());
    };
    fill(m.net.w1(), j.at("weights").at(0), "weights[0]");
    fill(m.net.w2(), j.at("weights").at(1), "weights[1]");
    fill(m.net.b1(), j.at("biases").at(0), "biases[0]");
    fill(m.net.b2(), j.at("biases").at(1), "biases[1]");
    m.alpha = j.at("alpha").get<double>();
    m.train_config = train_config_from_json(j.at("train_config"));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed model file: ") + e.what());
  }
}

std::string serialize(const ModelFile& model) { return to_json(model).dump() + "\n"; }

void save_model(const std::filesystem::path& path, const ModelFile& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << serialize(model);
  if (!out) throw IoError("write failed: " + path.string());
}

ModelFile load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model: " + path.string());
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("malformed model JSON " + path.string() + ": " + e.what());
  }
  return model_from_json(j);
}

std::string loss_curve_csv(std::span<const double> epoch_loss) {
  std::string out = "epoch,mean_loss\n";
  char buf[64];
  for (std::size_t e = 0; e < epoch_loss.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", e + 1, epoch_loss[e]);
    out += buf;
  }
  return out;
}

}  // namespace simco::embed
