#include "simco/detect.hpp"

#include <cmath>
#include <numeric>

namespace simco::detect {

std::string_view to_string(Source source) { return source == Source::Oracle ? "oracle" : "blob"; }

Source source_from_string(std::string_view name) {
  if (name == "oracle") return Source::Oracle;
  if (name == "blob") return Source::Blob;
  throw Error("unknown detector: " + std::string(name));
}

std::vector<Detection> detect_oracle(const shapegen::ImageRecord& record) {
  std::vector<Detection> out;
  out.reserve(record.instances.size());
  for (const auto& inst : record.instances) out.push_back({inst.bbox, 1.0, Source::Oracle});
  return out;
}

namespace {

template <typename T>
T median_of(std::vector<T> v) {
  if (v.empty()) return T{};
  auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

double quantile_of(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  q = std::clamp(q, 0.0, 1.0);
  const auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(v.size() - 1)));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(idx), v.end());
  return v[idx];
}

std::vector<double> distances_to(const RasterImage& image, Rgb bg) {
  std::vector<double> d(static_cast<std::size_t>(image.width()) * image.height());
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x)
      d[static_cast<std::size_t>(y) * image.width() + x] = color_distance(image.at(x, y), bg);
  return d;
}

}  // namespace

Rgb estimate_background(const RasterImage& image) {
  const auto n = static_cast<std::size_t>(image.width()) * image.height();
  std::array<std::vector<std::uint8_t>, 3> ch;
  for (auto& c : ch) c.reserve(n);
  const auto& b = image.bytes();
  for (std::size_t i = 0; i < n; ++i) {
    ch[0].push_back(b[3 * i]);
    ch[1].push_back(b[3 * i + 1]);
    ch[2].push_back(b[3 * i + 2]);
  }
  return {median_of(std::move(ch[0])), median_of(std::move(ch[1])), median_of(std::move(ch[2]))};
}

double foreground_threshold(const RasterImage& image, Rgb background, double quantile) {
  std::vector<double> d = distances_to(image, background);
  const double gate = 4.0 * median_of(d) + 4.0;
  std::erase_if(d, [gate](double v) { return v > gate; });
  return std::max(2.0 * quantile_of(std::move(d), quantile), 8.0);
}

std::vector<Detection> detect_blobs(const RasterImage& image, const BlobParams& params) {
  std::vector<Detection> out;
  if (image.empty()) return out;
  const int w = image.width(), h = image.height();
  const Rgb bg = estimate_background(image);
  const std::vector<double> dist = distances_to(image, bg);
  const double thr = foreground_threshold(image, bg, params.threshold_quantile);

  std::vector<int> label(dist.size(), -1);
  std::vector<int> stack;
  const double norm = 255.0 * std::sqrt(3.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t start = static_cast<std::size_t>(y) * w + x;
      if (label[start] >= 0 || dist[start] <= thr) continue;
      label[start] = 1;
      stack.assign(1, static_cast<int>(start));
      BBox box{x, y, x, y};
      long area = 0;
      double dsum = 0.0;
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        const int px = p % w, py = p / w;
        ++area;
        dsum += dist[p];
        box.x0 = std::min(box.x0, px);
        box.x1 = std::max(box.x1, px);
        box.y0 = std::min(box.y0, py);
        box.y1 = std::max(box.y1, py);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = px + dx, ny = py + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            const std::size_t q = static_cast<std::size_t>(ny) * w + nx;
            if (label[q] >= 0 || dist[q] <= thr) continue;
            label[q] = 1;
            stack.push_back(static_cast<int>(q));
          }
        }
      }
      if (area < params.min_area_px || box.x1 <= box.x0 || box.y1 <= box.y0) continue;
      out.push_back({box, std::clamp(dsum / area / norm, 0.0, 1.0), Source::Blob});
    }
  }
  return out;
}

double normalized_log_scale(const BBox& box, int image_width, int image_height) {
  static const double lo = std::log(shapegen::kMinScale * shapegen::kMinScale / 8.0);
  static const double hi = std::log(shapegen::kMaxScale * shapegen::kMaxScale * 2.0);
  const double frac = double(box.area()) / (double(image_width) * image_height);
  return std::clamp((std::log(frac) - lo) / (hi - lo), 0.0, 1.0);
}

FeatureVector extract_features(const RasterImage& image, const Detection& det, int patch) {
  if (patch < 1) throw Error("extract_features: patch size must be >= 1");
  const BBox& b = det.bbox;
  if (!b.inside(image.width(), image.height()))
    throw Error("extract_features: detection box outside image");
  FeatureVector f;
  f.patch = patch;
  f.values.resize(feature_dim(patch));
  const int cw = b.width(), ch = b.height();
  // pixel-center aligned bilinear sampling; identity when the crop is already P x P
  auto source_coord = [patch](int dst, int extent, int& i0, int& i1, double& t) {
    const double s = std::clamp((dst + 0.5) * extent / patch - 0.5, 0.0, double(extent - 1));
    i0 = static_cast<int>(s);
    i1 = std::min(i0 + 1, extent - 1);
    t = s - i0;
  };
  std::size_t k = 0;
  for (int v = 0; v < patch; ++v) {
    int y0, y1;
    double ty;
    source_coord(v, ch, y0, y1, ty);
    for (int u = 0; u < patch; ++u) {
      int x0, x1;
      double tx;
      source_coord(u, cw, x0, x1, tx);
      const Rgb p00 = image.at(b.x0 + x0, b.y0 + y0), p10 = image.at(b.x0 + x1, b.y0 + y0);
      const Rgb p01 = image.at(b.x0 + x0, b.y0 + y1), p11 = image.at(b.x0 + x1, b.y0 + y1);
      auto lerp = [&](double c00, double c10, double c01, double c11) {
        return ((c00 * (1 - tx) + c10 * tx) * (1 - ty) + (c01 * (1 - tx) + c11 * tx) * ty) / 255.0;
      };
      f.values[k++] = lerp(p00.r, p10.r, p01.r, p11.r);
      f.values[k++] = lerp(p00.g, p10.g, p01.g, p11.g);
      f.values[k++] = lerp(p00.b, p10.b, p01.b, p11.b);
    }
  }
  f.values[k] = normalized_log_scale(b, image.width(), image.height());
  return f;
}

nlohmann::ordered_json to_json(const Detection& det, std::string_view image_id) {
  return {{"image_id", image_id},
          {"bbox", {det.bbox.x0, det.bbox.y0, det.bbox.x1, det.bbox.y1}},
          {"score", det.score},
          {"source", to_string(det.source)}};
}

std::string to_json_lines(const std::vector<Detection>& dets, std::string_view image_id) {
  std::string out;
  for (const auto& d : dets) out += to_json(d, image_id).dump() + "\n";
  return out;
}

}  // namespace simco::detect
