#include "pcdm/drawing.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "pcdm/errors.hpp"
#include "pcdm/random.hpp"

namespace pcdm {

namespace {

constexpr std::array<Rgb, kNumClasses> kColors{{
    {255, 255, 255},
    {255, 0, 0},
    {152, 152, 152},
    {0, 255, 0},
    {0, 0, 255},
}};

constexpr Rgb kCanvasBackground{0, 0, 0};
constexpr Rgb kCanvasInfill{152, 152, 152};
constexpr Rgb kCanvasShear{255, 255, 255};

void require_same_size(int64_t w1, int64_t h1, int64_t w2, int64_t h2, const char* what) {
  if (w1 != w2 || h1 != h2)
    throw DimensionError(std::string(what) + ": " + std::to_string(w1) + "x" + std::to_string(h1) + " vs " +
                         std::to_string(w2) + "x" + std::to_string(h2));
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double parse_number(const std::string& s, int line) {
  double v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw DataError("segment table line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

}  // namespace

Rgb class_color(PixelClass c) { return kColors[static_cast<size_t>(c)]; }

const char* class_name(PixelClass c) {
  switch (c) {
    case PixelClass::Background: return "background";
    case PixelClass::ShearWall: return "shear";
    case PixelClass::InfillWall: return "infill";
    case PixelClass::Window: return "window";
    case PixelClass::Gate: return "gate";
  }
  return "?";
}

std::optional<PixelClass> class_of(Rgb rgb) {
  for (int i = 0; i < kNumClasses; ++i) {
    if (kColors[static_cast<size_t>(i)] == rgb) return static_cast<PixelClass>(i);
  }
  return std::nullopt;
}

PixelClass nearest_class(Rgb rgb) {
  int best = 0;
  int best_d = 1 << 30;
  for (int i = 0; i < kNumClasses; ++i) {
    const Rgb c = kColors[static_cast<size_t>(i)];
    const int dr = rgb.r - c.r, dg = rgb.g - c.g, db = rgb.b - c.b;
    const int d = dr * dr + dg * dg + db * db;
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return static_cast<PixelClass>(best);
}

SemanticDrawing::SemanticDrawing(int64_t w, int64_t h, PixelClass fill) : width(w), height(h) {
  if (w <= 0 || h <= 0) throw DimensionError("drawing dimensions must be positive");
  classes.assign(static_cast<size_t>(w * h), fill);
}

std::array<int64_t, kNumClasses> SemanticDrawing::histogram() const {
  std::array<int64_t, kNumClasses> h{};
  for (PixelClass c : classes) ++h[static_cast<size_t>(c)];
  return h;
}

Canvas::Canvas(int64_t w, int64_t h, double fill) : width(w), height(h) {
  if (w <= 0 || h <= 0) throw DimensionError("canvas dimensions must be positive");
  values.assign(static_cast<size_t>(w * h), fill);
}

Tensor Canvas::to_tensor() const { return Tensor({1, height, width}, values); }

Canvas Canvas::from_tensor(const Tensor& t) {
  if (t.ndim() != 3 || t.dim(0) != 1) throw DimensionError("canvas tensor must be [1, H, W], got " + shape_str(t.shape()));
  Canvas c(t.dim(2), t.dim(1));
  std::copy(t.data().begin(), t.data().end(), c.values.begin());
  return c;
}

RgbImage canvas_to_rgb(const Canvas& canvas) {
  RgbImage img(canvas.width, canvas.height);
  for (int64_t y = 0; y < canvas.height; ++y) {
    for (int64_t x = 0; x < canvas.width; ++x) {
      const double v = canvas.at(x, y);
      const Rgb c = v > 0.5 ? kCanvasShear : (v > -0.5 ? kCanvasInfill : kCanvasBackground);
      uint8_t* p = img.at(x, y);
      p[0] = c.r;
      p[1] = c.g;
      p[2] = c.b;
    }
  }
  return img;
}

Canvas canvas_from_rgb(const RgbImage& image) {
  Canvas c(image.width, image.height);
  for (int64_t y = 0; y < image.height; ++y) {
    for (int64_t x = 0; x < image.width; ++x) {
      const uint8_t* p = image.at(x, y);
      const Rgb rgb{p[0], p[1], p[2]};
      if (rgb == kCanvasBackground) c.at(x, y) = -1.0;
      else if (rgb == kCanvasInfill) c.at(x, y) = 0.0;
      else if (rgb == kCanvasShear) c.at(x, y) = 1.0;
      else
        throw DataError("canvas pixel (" + std::to_string(x) + ", " + std::to_string(y) + ") has non-canvas colour (" +
                        std::to_string(p[0]) + ", " + std::to_string(p[1]) + ", " + std::to_string(p[2]) + ")");
    }
  }
  return c;
}

bool looks_like_canvas(const RgbImage& image) {
  for (size_t i = 0; i + 2 < image.pixels.size(); i += 3) {
    if (image.pixels[i] == 0 && image.pixels[i + 1] == 0 && image.pixels[i + 2] == 0) return true;
  }
  return false;
}

SemanticDrawing drawing_from_rgb(const RgbImage& image, RgbMode mode) {
  SemanticDrawing d(image.width, image.height);
  for (int64_t y = 0; y < image.height; ++y) {
    for (int64_t x = 0; x < image.width; ++x) {
      const uint8_t* p = image.at(x, y);
      const Rgb rgb{p[0], p[1], p[2]};
      if (mode == RgbMode::Lenient) {
        d.at(x, y) = nearest_class(rgb);
        continue;
      }
      const auto cls = class_of(rgb);
      if (!cls)
        throw DataError("pixel (" + std::to_string(x) + ", " + std::to_string(y) + ") has unknown colour (" +
                        std::to_string(p[0]) + ", " + std::to_string(p[1]) + ", " + std::to_string(p[2]) + ")");
      d.at(x, y) = *cls;
    }
  }
  return d;
}

RgbImage drawing_to_rgb(const SemanticDrawing& drawing) {
  RgbImage img(drawing.width, drawing.height);
  for (int64_t y = 0; y < drawing.height; ++y) {
    for (int64_t x = 0; x < drawing.width; ++x) {
      const Rgb c = class_color(drawing.at(x, y));
      uint8_t* p = img.at(x, y);
      p[0] = c.r;
      p[1] = c.g;
      p[2] = c.b;
    }
  }
  return img;
}

std::optional<double> parse_condition(std::string_view name) {
  if (name.find("8degree") != std::string_view::npos) return 2.5;
  const auto pos = name.find("7degree");
  if (pos == std::string_view::npos) return std::nullopt;
  const std::string_view rest = name.substr(pos + 7);
  if (rest.find("H1") != std::string_view::npos) return 1.0;
  if (rest.find("H2") != std::string_view::npos) return 1.5;
  throw DataError("'" + std::string(name) + "': 7degree drawings need an H1 or H2 height tag");
}

std::string group_tag(double d) {
  if (d == 1.0) return "7degree-H1";
  if (d == 1.5) return "7degree-H2";
  if (d == 2.5) return "8degree";
  throw DataError("condition " + std::to_string(d) + " has no group tag");
}

SemanticDrawing load_drawing(const std::vector<uint8_t>& png, RgbMode mode, std::string_view name) {
  SemanticDrawing d = drawing_from_rgb(decode_png(png), mode);
  d.origin_id = std::string(name);
  d.condition = parse_condition(name);
  return d;
}

SemanticDrawing load_drawing_file(const std::filesystem::path& path, RgbMode mode) {
  try {
    return load_drawing(read_file_bytes(path), mode, path.stem().string());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void save_drawing(const std::filesystem::path& path, const SemanticDrawing& drawing) {
  write_png(path, drawing_to_rgb(drawing));
}

Canvas extract_canvas(const SemanticDrawing& arch) {
  Canvas c(arch.width, arch.height, -1.0);
  for (size_t i = 0; i < arch.classes.size(); ++i) {
    if (arch.classes[i] == PixelClass::ShearWall)
      throw UsageError("extract_canvas: input already contains shear walls (pixel " + std::to_string(i) + ")");
    if (arch.classes[i] == PixelClass::InfillWall) c.values[i] = 0.0;
  }
  return c;
}

Canvas line_drawing_of(const SemanticDrawing& structural) {
  Canvas c(structural.width, structural.height, -1.0);
  for (size_t i = 0; i < structural.classes.size(); ++i) {
    if (structural.classes[i] == PixelClass::ShearWall) c.values[i] = 1.0;
    else if (structural.classes[i] == PixelClass::InfillWall) c.values[i] = 0.0;
  }
  return c;
}

SemanticDrawing architectural_of(const SemanticDrawing& structural) {
  SemanticDrawing a = structural;
  for (PixelClass& c : a.classes) {
    if (c == PixelClass::ShearWall) c = PixelClass::InfillWall;
  }
  return a;
}

Canvas quantize_line_drawing(const Tensor& raw, const Canvas& canvas) {
  if (raw.numel() != canvas.width * canvas.height || (raw.ndim() == 3 && (raw.dim(1) != canvas.height || raw.dim(2) != canvas.width)))
    throw DimensionError("quantize_line_drawing: raw " + shape_str(raw.shape()) + " vs canvas " +
                         std::to_string(canvas.height) + "x" + std::to_string(canvas.width));
  Canvas out(canvas.width, canvas.height);
  for (size_t i = 0; i < out.values.size(); ++i) {
    const double v = raw[static_cast<int64_t>(i)];
    double q = v >= 0.5 ? 1.0 : (v >= -0.5 ? 0.0 : -1.0);
    if (q == 1.0 && canvas.values[i] == -1.0) q = -1.0;
    out.values[i] = q;
  }
  return out;
}

SemanticDrawing compose_structural(const Canvas& line, const SemanticDrawing& arch) {
  require_same_size(line.width, line.height, arch.width, arch.height, "compose_structural");
  SemanticDrawing out(arch.width, arch.height);
  out.condition = arch.condition;
  out.origin_id = arch.origin_id;
  for (size_t i = 0; i < out.classes.size(); ++i) {
    const double v = line.values[i];
    const PixelClass a = arch.classes[i];
    // openings are painted last, over whatever the line drawing says
    if (a == PixelClass::Window || a == PixelClass::Gate) out.classes[i] = a;
    else if (v == 1.0) out.classes[i] = PixelClass::ShearWall;
    else if (v == 0.0) out.classes[i] = PixelClass::InfillWall;
  }
  return out;
}

WallSegmentTable parse_segment_csv(std::string_view text, double extent_width, double extent_height) {
  if (!(extent_width > 0) || !(extent_height > 0)) throw DataError("segment table extents must be positive");
  WallSegmentTable table{extent_width, extent_height, {}};
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ls(t);
    for (std::string c; std::getline(ls, c, ',');) cols.push_back(trim(c));
    if (!header) {
      if (cols != std::vector<std::string>{"x0", "y0", "x1", "y1", "thickness", "kind"})
        throw DataError("segment table must start with header x0,y0,x1,y1,thickness,kind");
      header = true;
      continue;
    }
    if (cols.size() != 6) throw DataError("segment table line " + std::to_string(lineno) + ": expected 6 columns");
    WallSegment s;
    s.x0 = parse_number(cols[0], lineno);
    s.y0 = parse_number(cols[1], lineno);
    s.x1 = parse_number(cols[2], lineno);
    s.y1 = parse_number(cols[3], lineno);
    s.thickness = parse_number(cols[4], lineno);
    if (cols[5] == "infill") s.kind = PixelClass::InfillWall;
    else if (cols[5] == "window") s.kind = PixelClass::Window;
    else if (cols[5] == "gate") s.kind = PixelClass::Gate;
    else throw DataError("segment table line " + std::to_string(lineno) + ": unknown kind '" + cols[5] + "'");
    if (!(s.thickness > 0)) throw DataError("segment table line " + std::to_string(lineno) + ": thickness must be > 0");
    for (double x : {s.x0, s.x1}) {
      if (x < 0 || x > extent_width)
        throw DataError("segment table line " + std::to_string(lineno) + ": x outside [0, " + std::to_string(extent_width) + "]");
    }
    for (double y : {s.y0, s.y1}) {
      if (y < 0 || y > extent_height)
        throw DataError("segment table line " + std::to_string(lineno) + ": y outside [0, " + std::to_string(extent_height) + "]");
    }
    if (s.x0 != s.x1 && s.y0 != s.y1)
      throw DataError("segment table line " + std::to_string(lineno) + ": segment is not axis-aligned");
    table.rows.push_back(s);
  }
  if (!header) throw DataError("segment table is missing its header");
  return table;
}

SemanticDrawing rasterize_segments(const WallSegmentTable& table, int64_t width, int64_t height) {
  SemanticDrawing d(width, height);
  const double sx = static_cast<double>(width) / table.extent_width;
  const double sy = static_cast<double>(height) / table.extent_height;
  auto rank = [](PixelClass c) {
    switch (c) {
      case PixelClass::Gate: return 3;
      case PixelClass::Window: return 2;
      case PixelClass::InfillWall: return 1;
      default: return 0;
    }
  };
  for (const WallSegment& s : table.rows) {
    for (double x : {s.x0, s.x1}) {
      if (x < 0 || x > table.extent_width) throw DataError("segment x coordinate outside the drawing extent");
    }
    for (double y : {s.y0, s.y1}) {
      if (y < 0 || y > table.extent_height) throw DataError("segment y coordinate outside the drawing extent");
    }
    const bool horizontal = s.y0 == s.y1;
    double xlo = std::min(s.x0, s.x1), xhi = std::max(s.x0, s.x1);
    double ylo = std::min(s.y0, s.y1), yhi = std::max(s.y0, s.y1);
    if (horizontal) {
      ylo -= s.thickness / 2;
      yhi += s.thickness / 2;
    } else {
      xlo -= s.thickness / 2;
      xhi += s.thickness / 2;
    }
    xlo *= sx;
    xhi *= sx;
    ylo *= sy;
    yhi *= sy;
    const int64_t x_begin = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(xlo - 0.5)));
    const int64_t x_end = std::min<int64_t>(width, static_cast<int64_t>(std::ceil(xhi - 0.5)));
    const int64_t y_begin = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(ylo - 0.5)));
    const int64_t y_end = std::min<int64_t>(height, static_cast<int64_t>(std::ceil(yhi - 0.5)));
    for (int64_t y = y_begin; y < y_end; ++y) {
      for (int64_t x = x_begin; x < x_end; ++x) {
        if (rank(s.kind) > rank(d.at(x, y))) d.at(x, y) = s.kind;
      }
    }
  }
  return d;
}

SemanticDrawing flip_vertical(const SemanticDrawing& d) {
  SemanticDrawing o = d;
  for (int64_t y = 0; y < d.height; ++y) {
    for (int64_t x = 0; x < d.width; ++x) o.at(x, y) = d.at(x, d.height - 1 - y);
  }
  return o;
}

SemanticDrawing flip_horizontal(const SemanticDrawing& d) {
  SemanticDrawing o = d;
  for (int64_t y = 0; y < d.height; ++y) {
    for (int64_t x = 0; x < d.width; ++x) o.at(x, y) = d.at(d.width - 1 - x, y);
  }
  return o;
}

SemanticDrawing rotate_180(const SemanticDrawing& d) {
  SemanticDrawing o = d;
  std::reverse(o.classes.begin(), o.classes.end());
  return o;
}

std::vector<SemanticDrawing> augment(const SemanticDrawing& d) {
  std::vector<SemanticDrawing> out{d, flip_vertical(d), flip_horizontal(d), rotate_180(d)};
  for (size_t i = 0; i < out.size(); ++i) {
    if (!d.origin_id.empty()) out[i].origin_id = d.origin_id + "__" + kAugmentOps[i];
  }
  return out;
}

SemanticDrawing downsample_majority(const SemanticDrawing& d, int64_t out_width, int64_t out_height) {
  if (out_width <= 0 || out_height <= 0 || d.width % out_width != 0 || d.height % out_height != 0)
    throw DimensionError("downsample " + std::to_string(d.width) + "x" + std::to_string(d.height) + " to " +
                         std::to_string(out_width) + "x" + std::to_string(out_height) + ": factors must be integers");
  const int64_t fx = d.width / out_width, fy = d.height / out_height;
  static constexpr std::array<PixelClass, kNumClasses> kTieOrder{PixelClass::Gate, PixelClass::Window,
                                                                 PixelClass::ShearWall, PixelClass::InfillWall,
                                                                 PixelClass::Background};
  SemanticDrawing o(out_width, out_height);
  o.condition = d.condition;
  o.origin_id = d.origin_id;
  for (int64_t oy = 0; oy < out_height; ++oy) {
    for (int64_t ox = 0; ox < out_width; ++ox) {
      std::array<int64_t, kNumClasses> count{};
      for (int64_t y = oy * fy; y < (oy + 1) * fy; ++y) {
        for (int64_t x = ox * fx; x < (ox + 1) * fx; ++x) ++count[static_cast<size_t>(d.at(x, y))];
      }
      PixelClass best = kTieOrder[0];
      for (PixelClass c : kTieOrder) {
        if (count[static_cast<size_t>(c)] > count[static_cast<size_t>(best)]) best = c;
      }
      o.at(ox, oy) = best;
    }
  }
  return o;
}

SemanticDrawing synth_layout(int64_t width, int64_t height, double d, uint64_t seed) {
  if (width < 16 || height < 16) throw ConfigError("synthetic layouts need at least 16x16 pixels");
  Rng rng(seed);
  SemanticDrawing s(width, height);
  s.condition = d;

  auto fill = [&](int64_t x0, int64_t x1, int64_t y0, int64_t y1, PixelClass c) {
    for (int64_t y = y0; y < y1; ++y) {
      for (int64_t x = x0; x < x1; ++x) s.at(x, y) = c;
    }
  };
  const PixelClass interior_h = d >= 2.0 ? PixelClass::ShearWall : PixelClass::InfillWall;

  // Interior horizontal wall, then vertical walls over it so crossings stay shear.
  const int64_t hy = rng.uniform_int(height / 4, height - height / 4 - 1);
  fill(2, width - 2, hy, hy + 1, interior_h);
  const int64_t n_vertical = rng.uniform_int(1, 3);
  const int64_t span = (width - 12) / n_vertical;
  for (int64_t i = 0; i < n_vertical; ++i) {
    const int64_t lo = 6 + i * span;
    const int64_t x = rng.uniform_int(lo, lo + std::max<int64_t>(0, span - 5));
    fill(x, x + 1, 2, height - 2, PixelClass::ShearWall);
  }

  fill(0, width, 0, 2, PixelClass::InfillWall);
  fill(0, width, height - 2, height, PixelClass::InfillWall);
  fill(0, 2, 0, height, PixelClass::ShearWall);
  fill(width - 2, width, 0, height, PixelClass::ShearWall);

  const int64_t n_windows = rng.uniform_int(1, 3);
  const int64_t slot = (width - 4) / n_windows;
  for (int64_t i = 0; i < n_windows; ++i) {
    const int64_t w = rng.uniform_int(3, std::max<int64_t>(3, std::min<int64_t>(6, slot - 2)));
    const int64_t x = 2 + i * slot + rng.uniform_int(0, std::max<int64_t>(0, slot - w - 1));
    fill(x, std::min(x + w, width - 2), 0, 2, PixelClass::Window);
  }
  const int64_t gw = rng.uniform_int(4, 6);
  const int64_t gx = rng.uniform_int(2, width - 2 - gw);
  fill(gx, gx + gw, height - 2, height, PixelClass::Gate);
  return s;
}

}  // namespace pcdm
