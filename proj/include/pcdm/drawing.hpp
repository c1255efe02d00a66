#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pcdm/image.hpp"
#include "pcdm/tensor.hpp"

namespace pcdm {

enum class PixelClass : uint8_t { Background = 0, ShearWall = 1, InfillWall = 2, Window = 3, Gate = 4 };
inline constexpr int kNumClasses = 5;

struct Rgb {
  uint8_t r, g, b;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

Rgb class_color(PixelClass c);
const char* class_name(PixelClass c);
/// Exact match against the five canonical colours.
std::optional<PixelClass> class_of(Rgb rgb);
/// Canonical colour nearest in Euclidean RGB distance (ties go to the lower class index).
PixelClass nearest_class(Rgb rgb);

enum class RgbMode { Strict, Lenient };

/// Per-pixel class raster, row-major.
struct SemanticDrawing {
  int64_t width = 0;
  int64_t height = 0;
  std::vector<PixelClass> classes;
  std::optional<double> condition;
  std::string origin_id;

  SemanticDrawing() = default;
  SemanticDrawing(int64_t w, int64_t h, PixelClass fill = PixelClass::Background);

  PixelClass& at(int64_t x, int64_t y) { return classes[static_cast<size_t>(y * width + x)]; }
  PixelClass at(int64_t x, int64_t y) const { return classes[static_cast<size_t>(y * width + x)]; }
  std::array<int64_t, kNumClasses> histogram() const;
  bool same_pixels(const SemanticDrawing& o) const {
    return width == o.width && height == o.height && classes == o.classes;
  }
};

/// Single-channel stage-1 raster with values in {-1, 0, +1}.
struct Canvas {
  int64_t width = 0;
  int64_t height = 0;
  std::vector<double> values;

  Canvas() = default;
  Canvas(int64_t w, int64_t h, double fill = -1.0);

  double& at(int64_t x, int64_t y) { return values[static_cast<size_t>(y * width + x)]; }
  double at(int64_t x, int64_t y) const { return values[static_cast<size_t>(y * width + x)]; }
  /// [1, H, W] tensor view for the denoiser.
  Tensor to_tensor() const;
  static Canvas from_tensor(const Tensor& t);
  friend bool operator==(const Canvas&, const Canvas&) = default;
};

// Canvas raster colours: -1 black, 0 grey, +1 white.
RgbImage canvas_to_rgb(const Canvas& canvas);
/// Accepts only the three canvas colours.
Canvas canvas_from_rgb(const RgbImage& image);
/// A canvas PNG is recognised by black pixels, which never occur in drawings.
bool looks_like_canvas(const RgbImage& image);

SemanticDrawing drawing_from_rgb(const RgbImage& image, RgbMode mode = RgbMode::Strict);
RgbImage drawing_to_rgb(const SemanticDrawing& drawing);

/// Physical condition from a file name: "7degree-H1" -> 1.0, "7degree-H2" -> 1.5,
/// "8degree" -> 2.5. nullopt when no identifier is present; DataError for a
/// 7degree name without a height tag.
std::optional<double> parse_condition(std::string_view name);
/// Group tag for a condition value (inverse of parse_condition).
std::string group_tag(double d);

SemanticDrawing load_drawing(const std::vector<uint8_t>& png, RgbMode mode = RgbMode::Strict,
                             std::string_view name = {});
/// origin_id is the file stem; condition is parsed from it.
SemanticDrawing load_drawing_file(const std::filesystem::path& path, RgbMode mode = RgbMode::Strict);
void save_drawing(const std::filesystem::path& path, const SemanticDrawing& drawing);

/// InfillWall -> 0, everything else -> -1. UsageError if shear walls are present.
Canvas extract_canvas(const SemanticDrawing& arch);
/// Stage-1 target of a structural drawing: ShearWall -> +1, InfillWall -> 0, else -1.
Canvas line_drawing_of(const SemanticDrawing& structural);
/// The architectural drawing behind a structural one: shear walls revert to infill.
SemanticDrawing architectural_of(const SemanticDrawing& structural);

/// Snap each value to the nearest of {-1, 0, +1}; +1 where the canvas is -1 is demoted to -1.
Canvas quantize_line_drawing(const Tensor& raw, const Canvas& canvas);

/// +1 -> ShearWall, 0 -> InfillWall, windows and gates from arch, rest Background.
SemanticDrawing compose_structural(const Canvas& line, const SemanticDrawing& arch);

struct WallSegment {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double thickness = 1;
  PixelClass kind = PixelClass::InfillWall;
};

struct WallSegmentTable {
  double extent_width = 0;  // drawing units
  double extent_height = 0;
  std::vector<WallSegment> rows;
};

/// CSV with header x0,y0,x1,y1,thickness,kind and kind in {infill, window, gate}.
WallSegmentTable parse_segment_csv(std::string_view text, double extent_width, double extent_height);

/// Paint axis-aligned thick segments, priority Gate > Window > InfillWall.
/// A pixel is covered when its centre lies in the half-open rectangle spanned
/// by the segment and widened by thickness/2 across it.
SemanticDrawing rasterize_segments(const WallSegmentTable& table, int64_t width, int64_t height);

SemanticDrawing flip_vertical(const SemanticDrawing& d);
SemanticDrawing flip_horizontal(const SemanticDrawing& d);
SemanticDrawing rotate_180(const SemanticDrawing& d);
/// [original, vertical flip, horizontal flip, 180 degree rotation].
std::vector<SemanticDrawing> augment(const SemanticDrawing& d);
inline constexpr std::array<const char*, 4> kAugmentOps{"orig", "vflip", "hflip", "rot180"};

/// Area-majority reduction by integer factors. Ties go to the rarer, thinner
/// class in the order Gate, Window, ShearWall, InfillWall, Background.
SemanticDrawing downsample_majority(const SemanticDrawing& d, int64_t out_width, int64_t out_height);

/// Procedural structural layout: 2 px exterior walls (vertical ones shear,
/// horizontal ones infill with windows on top and a gate at the bottom),
/// 1-3 interior vertical shear walls and one interior horizontal wall that is
/// shear when d >= 2 and infill otherwise.
SemanticDrawing synth_layout(int64_t width, int64_t height, double d, uint64_t seed);

}  // namespace pcdm
