#include "simco/shapegen.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "simco/manifest.hpp"
#include "simco/parallel.hpp"

namespace simco::shapegen {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

Point rotate(Point p, double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  return {p.x * c - p.y * s, p.x * s + p.y * c};
}

std::vector<Point> regular_polygon(int sides, double radius, double theta) {
  std::vector<Point> pts;
  pts.reserve(sides);
  for (int i = 0; i < sides; ++i) {
    // first vertex points up (negative y in image coordinates)
    const double a = -std::numbers::pi / 2 + kTwoPi * i / sides;
    pts.push_back(rotate({radius * std::cos(a), radius * std::sin(a)}, theta));
  }
  return pts;
}

std::vector<Point> rotated_rect(double half_w, double half_h, double theta) {
  return {rotate({-half_w, -half_h}, theta), rotate({half_w, -half_h}, theta),
          rotate({half_w, half_h}, theta), rotate({-half_w, half_h}, theta)};
}

double cross(Point a, Point b, Point p) {
  return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
}

}  // namespace

std::string_view to_string(ShapeClass shape) {
  switch (shape) {
    case ShapeClass::Lined: return "lined";
    case ShapeClass::Triangle: return "triangle";
    case ShapeClass::Rectangle: return "rectangle";
    case ShapeClass::Diamond: return "diamond";
    case ShapeClass::Pentagon: return "pentagon";
    case ShapeClass::Hexagon: return "hexagon";
    case ShapeClass::Ellipse: return "ellipse";
  }
  return "unknown";
}

ShapeClass shape_from_string(std::string_view name) {
  for (auto s : kAllShapes)
    if (to_string(s) == name) return s;
  throw Error("unknown shape class: " + std::string(name));
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "unknown";
}

Split split_from_string(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw Error("unknown split: " + std::string(name));
}

double scale_from_step(int step) { return kMinScale + kScaleStep * step; }

bool type_less(const ObjectType& a, const ObjectType& b) {
  if (a.shape != b.shape) return a.shape < b.shape;
  if (a.color != b.color) return a.color < b.color;
  if (a.scale != b.scale) return a.scale < b.scale;
  return a.rotation < b.rotation;
}

int ImageRecord::instance_count(int type_index) const {
  int n = 0;
  for (const auto& inst : instances) n += inst.type_index == type_index;
  return n;
}

std::vector<const ImageRecord*> DatasetManifest::split(Split which) const {
  std::vector<const ImageRecord*> out;
  for (const auto& r : images)
    if (r.split == which) out.push_back(&r);
  return out;
}

void GeneratorConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid generator config: " + what); };
  if (num_images < 0) fail("num_images < 0");
  if (width <= 0 || height <= 0) fail("width/height must be positive");
  if (min_types < 1 || max_types < min_types) fail("need 1 <= min_types <= max_types");
  if (grid_probability < 0.0 || grid_probability > 1.0) fail("grid_probability outside [0,1]");
  if (grid_min_rows < 1 || grid_max_rows < grid_min_rows) fail("grid rows range");
  if (grid_min_cols < 1 || grid_max_cols < grid_min_cols) fail("grid cols range");
  if (grid_max_jitter < 0.0 || grid_max_jitter >= 0.5) fail("grid_max_jitter outside [0,0.5)");
  if (poisson_min_expected <= 0.0 || poisson_max_expected < poisson_min_expected)
    fail("poisson expected range");
  if (separation_factor < 0.0) fail("separation_factor < 0");
  if (noise_amplitude < 0.0 || noise_amplitude > 15.0) fail("noise_amplitude outside [0,15]");
  if (noise_cell < 1) fail("noise_cell < 1");
  if (min_type_color_distance < 0.0 || min_background_color_distance < 0.0)
    fail("color distances must be >= 0");
  if (train_fraction < 0.0 || val_fraction < 0.0 || train_fraction + val_fraction > 1.0)
    fail("split fractions");
}

// ---------------------------------------------------------------------------
// geometry

bool ShapeGeometry::contains(double dx, double dy) const {
  if (shape == ShapeClass::Ellipse) {
    const Point q = rotate({dx, dy}, -rotation);
    const double u = q.x / semi_major, v = q.y / semi_minor;
    return u * u + v * v <= 1.0;
  }
  const Point p{dx, dy};
  bool pos = false, neg = false;
  for (std::size_t i = 0; i < polygon.size(); ++i) {
    const double c = cross(polygon[i], polygon[(i + 1) % polygon.size()], p);
    pos |= c > 0;
    neg |= c < 0;
    if (pos && neg) return false;
  }
  return true;
}

Point ShapeGeometry::half_extent() const {
  if (shape == ShapeClass::Ellipse) {
    const double c = std::cos(rotation), s = std::sin(rotation);
    const double a2 = semi_major * semi_major, b2 = semi_minor * semi_minor;
    return {std::sqrt(a2 * c * c + b2 * s * s), std::sqrt(a2 * s * s + b2 * c * c)};
  }
  Point h;
  for (const auto& v : polygon) {
    h.x = std::max(h.x, std::abs(v.x));
    h.y = std::max(h.y, std::abs(v.y));
  }
  return h;
}

double ShapeGeometry::diameter() const {
  if (shape == ShapeClass::Ellipse) return 2.0 * semi_major;
  double r = 0.0;
  for (const auto& v : polygon) r = std::max(r, std::hypot(v.x, v.y));
  return 2.0 * r;
}

double shape_size(const ObjectType& type, int width, int height) {
  return type.scale * std::min(width, height);
}

double ellipse_axis_ratio(const ObjectType& type) {
  std::uint64_t h = splitmix64(static_cast<std::uint64_t>(type.shape));
  h = splitmix64(h ^ (std::uint64_t(type.color.r) << 16 | std::uint64_t(type.color.g) << 8 | type.color.b));
  h = splitmix64(h ^ std::bit_cast<std::uint64_t>(type.scale));
  h = splitmix64(h ^ std::bit_cast<std::uint64_t>(type.rotation));
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return 0.6 + 0.4 * u;
}

ShapeGeometry make_geometry(const ObjectType& type, int width, int height) {
  const double s = shape_size(type, width, height);
  const double th = type.rotation;
  ShapeGeometry g{type.shape, {}, 0.0, 0.0, th};
  switch (type.shape) {
    case ShapeClass::Lined: g.polygon = rotated_rect(s / 2, s / (2 * kLinedAspect), th); break;
    case ShapeClass::Triangle: g.polygon = regular_polygon(3, s / std::sqrt(3.0), th); break;
    case ShapeClass::Rectangle: g.polygon = rotated_rect(s / 2, s / 2, th); break;
    case ShapeClass::Diamond:
      g.polygon = {rotate({0, -s / 2}, th), rotate({0.3 * s, 0}, th), rotate({0, s / 2}, th),
                   rotate({-0.3 * s, 0}, th)};
      break;
    case ShapeClass::Pentagon: g.polygon = regular_polygon(5, s / 2, th); break;
    case ShapeClass::Hexagon: g.polygon = regular_polygon(6, s / 2, th); break;
    case ShapeClass::Ellipse:
      g.semi_major = s / 2;
      g.semi_minor = s / 2 * ellipse_axis_ratio(type);
      break;
  }
  return g;
}

BBox analytic_bbox(const ShapeGeometry& geom, Point center) {
  // pixels whose centers (x + 0.5, y + 0.5) can fall inside the extent
  const Point h = geom.half_extent();
  return {static_cast<int>(std::ceil(center.x - h.x - 0.5)), static_cast<int>(std::ceil(center.y - h.y - 0.5)),
          static_cast<int>(std::floor(center.x + h.x - 0.5)),
          static_cast<int>(std::floor(center.y + h.y - 0.5))};
}

// ---------------------------------------------------------------------------
// sampling and layout

std::vector<ObjectType> sample_types(Rng& rng, const GeneratorConfig& config, Rgb background) {
  const auto k = static_cast<int>(rng.uniform_int(config.min_types, config.max_types));
  std::vector<ObjectType> types;
  types.reserve(k);
  constexpr int kMaxRetries = 100;
  for (int t = 0; t < k; ++t) {
    bool placed = false;
    for (int attempt = 0; attempt <= kMaxRetries && !placed; ++attempt) {
      ObjectType cand;
      cand.shape = kAllShapes[rng.uniform_int(0, kAllShapes.size() - 1)];
      cand.color = {static_cast<std::uint8_t>(rng.uniform_int(0, 255)),
                    static_cast<std::uint8_t>(rng.uniform_int(0, 255)),
                    static_cast<std::uint8_t>(rng.uniform_int(0, 255))};
      cand.scale = scale_from_step(static_cast<int>(rng.uniform_int(0, kScaleSteps - 1)));
      cand.rotation = rng.uniform(0.0, kTwoPi);

      bool collides = color_distance(cand.color, background) < config.min_background_color_distance;
      for (const auto& other : types) {
        collides = collides || other == cand ||
                   color_distance(other.color, cand.color) < config.min_type_color_distance;
      }
      if (!collides) {
        types.push_back(cand);
        placed = true;
      }
    }
    if (!placed)
      throw Error("sample_types: no admissible type after 100 retries; type space too small for config");
  }
  return types;
}

std::vector<ShapeInstance> layout_instances(Rng& rng, const ObjectType& type, int type_index,
                                            const LayoutSpec& layout, int width, int height,
                                            std::optional<Region> region,
                                            std::span<const ShapeInstance> occupied) {
  const ShapeGeometry geom = make_geometry(type, width, height);
  const Point half = geom.half_extent();
  if (2 * half.x > width || 2 * half.y > height)
    throw Error("layout_instances: canvas too small for shape scale");
  const Region area = region.value_or(Region{0.0, 0.0, double(width), double(height)});

  std::vector<ShapeInstance> out;
  auto make = [&](Point c) {
    return ShapeInstance{type_index, c, analytic_bbox(geom, c)};
  };

  if (const auto* grid = std::get_if<AlignedGrid>(&layout)) {
    if (grid->rows < 1 || grid->cols < 1) throw Error("AlignedGrid: rows and cols must be >= 1");
    if (grid->jitter < 0.0 || grid->jitter >= 0.5) throw Error("AlignedGrid: jitter outside [0, 0.5)");
    const double cw = (area.x1 - area.x0) / grid->cols;
    const double ch = (area.y1 - area.y0) / grid->rows;
    for (int r = 0; r < grid->rows; ++r) {
      for (int c = 0; c < grid->cols; ++c) {
        Point p{area.x0 + (c + 0.5) * cw, area.y0 + (r + 0.5) * ch};
        if (grid->jitter > 0.0) {
          p.x += grid->jitter * cw * rng.uniform(-1.0, 1.0);
          p.y += grid->jitter * ch * rng.uniform(-1.0, 1.0);
        }
        // clamp inward so the analytic box stays on the canvas
        p.x = std::clamp(p.x, half.x, width - half.x);
        p.y = std::clamp(p.y, half.y, height - half.y);
        out.push_back(make(p));
      }
    }
    return out;
  }

  const auto& poisson = std::get<PoissonProcess>(layout);
  if (!(poisson.expected_count > 0.0)) throw Error("PoissonProcess: expected_count must be positive");
  if (poisson.min_center_separation < 0.0) throw Error("PoissonProcess: negative separation");
  const auto wanted = rng.poisson(poisson.expected_count);
  const double sep2 = poisson.min_center_separation * poisson.min_center_separation;
  auto far_enough = [&](Point p, std::span<const ShapeInstance> others) {
    for (const auto& o : others) {
      const double dx = o.center.x - p.x, dy = o.center.y - p.y;
      if (dx * dx + dy * dy < sep2) return false;
    }
    return true;
  };

  int attempts = 0;
  while (static_cast<std::int64_t>(out.size()) < wanted && attempts < kLayoutAttemptBudget) {
    ++attempts;
    const Point p{rng.uniform(area.x0, area.x1), rng.uniform(area.y0, area.y1)};
    const ShapeInstance inst = make(p);
    if (!inst.bbox.inside(width, height)) continue;
    if (!far_enough(p, occupied) || !far_enough(p, out)) continue;
    out.push_back(inst);
  }
  return out;
}

// ---------------------------------------------------------------------------
// rendering

RasterImage render_background(const BackgroundSpec& bg, int width, int height) {
  RasterImage img(width, height, bg.base);
  if (bg.noise_amplitude <= 0.0) return img;
  Rng rng(bg.noise_seed);
  const int gx = width / bg.noise_cell + 2;
  const int gy = height / bg.noise_cell + 2;
  std::vector<double> lattice(static_cast<std::size_t>(gx) * gy);
  for (auto& v : lattice) v = rng.uniform(-1.0, 1.0);
  auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
  auto clamp8 = [](int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); };
  for (int y = 0; y < height; ++y) {
    const double fy = (y + 0.5) / bg.noise_cell;
    const int iy = static_cast<int>(fy);
    const double ty = smooth(fy - iy);
    for (int x = 0; x < width; ++x) {
      const double fx = (x + 0.5) / bg.noise_cell;
      const int ix = static_cast<int>(fx);
      const double tx = smooth(fx - ix);
      const double v00 = lattice[iy * gx + ix], v10 = lattice[iy * gx + ix + 1];
      const double v01 = lattice[(iy + 1) * gx + ix], v11 = lattice[(iy + 1) * gx + ix + 1];
      const double v = (v00 * (1 - tx) + v10 * tx) * (1 - ty) + (v01 * (1 - tx) + v11 * tx) * ty;
      const int off = static_cast<int>(std::lround(bg.noise_amplitude * v));
      img.set(x, y, {clamp8(bg.base.r + off), clamp8(bg.base.g + off), clamp8(bg.base.b + off)});
    }
  }
  return img;
}

RasterImage rasterize(ImageRecord& record) {
  RasterImage img = render_background(record.background, record.width, record.height);
  for (auto& inst : record.instances) {
    const ObjectType& type = record.types.at(inst.type_index);
    const ShapeGeometry geom = make_geometry(type, record.width, record.height);
    const BBox scan = analytic_bbox(geom, inst.center);
    BBox tight{record.width, record.height, -1, -1};
    for (int y = std::max(scan.y0 - 1, 0); y <= std::min(scan.y1 + 1, record.height - 1); ++y) {
      for (int x = std::max(scan.x0 - 1, 0); x <= std::min(scan.x1 + 1, record.width - 1); ++x) {
        if (!geom.contains(x + 0.5 - inst.center.x, y + 0.5 - inst.center.y)) continue;
        img.set(x, y, type.color);
        tight.x0 = std::min(tight.x0, x);
        tight.y0 = std::min(tight.y0, y);
        tight.x1 = std::max(tight.x1, x);
        tight.y1 = std::max(tight.y1, y);
      }
    }
    if (tight.x1 >= tight.x0) inst.bbox = tight;
  }
  return img;
}

// ---------------------------------------------------------------------------
// dataset

Split split_for_index(const GeneratorConfig& config, int index) {
  const auto n_train = static_cast<int>(std::floor(config.train_fraction * config.num_images + 1e-9));
  const auto n_val = static_cast<int>(std::floor(config.val_fraction * config.num_images + 1e-9));
  if (index < n_train) return Split::Train;
  if (index < n_train + n_val) return Split::Val;
  return Split::Test;
}

namespace {

// Lays out all types of one image; types left with fewer than two instances are dropped.
void place_instances(Rng& rng, const GeneratorConfig& config, ImageRecord& rec) {
  double max_diameter = 0.0;
  for (const auto& t : rec.types)
    max_diameter = std::max(max_diameter, make_geometry(t, rec.width, rec.height).diameter());
  const double sep = config.separation_factor * max_diameter;
  const int k = static_cast<int>(rec.types.size());

  std::vector<ShapeInstance> placed;
  if (rng.bernoulli(config.grid_probability)) {
    const bool horizontal_bands = rng.bernoulli(0.5);
    for (int t = 0; t < k; ++t) {
      Region band{0.0, 0.0, double(rec.width), double(rec.height)};
      if (horizontal_bands) {
        band.y0 = double(rec.height) * t / k;
        band.y1 = double(rec.height) * (t + 1) / k;
      } else {
        band.x0 = double(rec.width) * t / k;
        band.x1 = double(rec.width) * (t + 1) / k;
      }
      const double jitter = rng.uniform(0.0, config.grid_max_jitter);
      const double usable = 1.0 - 2.0 * jitter;
      // neighbouring centers stay >= sep apart even after jitter
      auto fit = [&](double extent) {
        return sep > 0.0 ? static_cast<int>(std::floor(extent * usable / sep)) : 1 << 20;
      };
      const int rows_hi = std::min(config.grid_max_rows, fit(band.y1 - band.y0));
      const int cols_hi = std::min(config.grid_max_cols, fit(band.x1 - band.x0));
      if (rows_hi < 1 || cols_hi < 1) continue;
      const int rows = static_cast<int>(rng.uniform_int(std::min(config.grid_min_rows, rows_hi), rows_hi));
      const int cols = static_cast<int>(rng.uniform_int(std::min(config.grid_min_cols, cols_hi), cols_hi));
      auto inst = layout_instances(rng, rec.types[t], t, AlignedGrid{rows, cols, jitter}, rec.width,
                                   rec.height, band);
      placed.insert(placed.end(), inst.begin(), inst.end());
    }
  } else {
    for (int t = 0; t < k; ++t) {
      const double expected = rng.uniform(config.poisson_min_expected, config.poisson_max_expected);
      auto inst = layout_instances(rng, rec.types[t], t, PoissonProcess{expected, sep}, rec.width,
                                   rec.height, std::nullopt, placed);
      placed.insert(placed.end(), inst.begin(), inst.end());
    }
  }

  // keep only repeated types, renumbered in original order
  std::vector<int> remap(k, -1);
  std::vector<ObjectType> kept;
  for (int t = 0; t < k; ++t) {
    int n = 0;
    for (const auto& p : placed) n += p.type_index == t;
    if (n >= 2) {
      remap[t] = static_cast<int>(kept.size());
      kept.push_back(rec.types[t]);
    }
  }
  rec.types = std::move(kept);
  rec.instances.clear();
  for (auto p : placed) {
    if (remap[p.type_index] < 0) continue;
    p.type_index = remap[p.type_index];
    rec.instances.push_back(p);
  }
}

std::string image_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%06d", index);
  return buf;
}

}  // namespace

GeneratedImage generate_image(const GeneratorConfig& config, std::uint64_t seed, int index) {
  Rng rng(substream_seed(seed, static_cast<std::uint64_t>(index)));
  ImageRecord rec;
  rec.id = image_id(index);
  rec.file = rec.id + ".ppm";
  rec.width = config.width;
  rec.height = config.height;
  rec.split = split_for_index(config, index);
  rec.background.base = {static_cast<std::uint8_t>(rng.uniform_int(0, 255)),
                         static_cast<std::uint8_t>(rng.uniform_int(0, 255)),
                         static_cast<std::uint8_t>(rng.uniform_int(0, 255))};
  rec.background.noise_amplitude = config.noise_amplitude;
  rec.background.noise_cell = config.noise_cell;
  rec.background.noise_seed = rng.next_u64();

  constexpr int kImageAttempts = 20;
  for (int attempt = 0; attempt < kImageAttempts; ++attempt) {
    rec.types = sample_types(rng, config, rec.background.base);
    place_instances(rng, config, rec);
    if (!rec.types.empty()) break;
  }
  GeneratedImage out;
  out.raster = rasterize(rec);
  out.record = std::move(rec);
  return out;
}

DatasetManifest build_manifest(const GeneratorConfig& config, std::uint64_t seed) {
  config.validate();
  DatasetManifest m;
  m.seed = seed;
  m.config = config;
  m.images.resize(config.num_images);
  parallel_for(m.images.size(), [&](std::size_t i) {
    m.images[i] = generate_image(config, seed, static_cast<int>(i)).record;
  });
  return m;
}

DatasetManifest generate_dataset(const GeneratorConfig& config, std::uint64_t seed,
                                 const std::filesystem::path& out_dir) {
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  DatasetManifest m;
  m.seed = seed;
  m.config = config;
  m.images.resize(config.num_images);
  parallel_for(m.images.size(), [&](std::size_t i) {
    auto gen = generate_image(config, seed, static_cast<int>(i));
    if (config.write_rasters) write_ppm(out_dir / gen.record.file, gen.raster);
    m.images[i] = std::move(gen.record);
  });
  write_manifest(out_dir / "manifest.json", m);
  return m;
}

}  // namespace simco::shapegen
