#pragma once

// Shape/color vocabulary shared by the scene generator, the caption
// tokenizer and the color tracker.

#include <array>
#include <cctype>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "trajvid/image.hpp"

namespace trajvid {

enum class Shape { kCircle, kSquare, kTriangle };

inline constexpr std::array<Shape, 3> kAllShapes = {Shape::kCircle, Shape::kSquare, Shape::kTriangle};

inline const char* shape_name(Shape s) {
  switch (s) {
    case Shape::kCircle: return "circle";
    case Shape::kSquare: return "square";
    case Shape::kTriangle: return "triangle";
  }
  return "circle";
}

inline std::optional<Shape> shape_from_name(std::string_view name) {
  for (auto s : kAllShapes)
    if (name == shape_name(s)) return s;
  return std::nullopt;
}

struct NamedColor {
  const char* name;
  Rgb rgb;
};

// Saturated object colors; backgrounds are always gray so they never match.
inline constexpr std::array<NamedColor, 6> kObjectPalette = {{
    {"red", {220, 40, 40}},
    {"green", {40, 190, 60}},
    {"blue", {40, 80, 230}},
    {"yellow", {230, 210, 40}},
    {"magenta", {210, 50, 200}},
    {"cyan", {40, 200, 210}},
}};

inline std::optional<Rgb> color_from_name(std::string_view name) {
  for (const auto& c : kObjectPalette)
    if (name == c.name) return c.rgb;
  return std::nullopt;
}

inline const char* color_name(Rgb rgb) {
  for (const auto& c : kObjectPalette)
    if (c.rgb == rgb) return c.name;
  return "unnamed";
}

// Trajectory overlay colors, one per foreground object.
inline constexpr std::array<Rgb, 6> kOverlayPalette = {{
    {255, 255, 255},
    {255, 140, 0},
    {0, 0, 0},
    {255, 105, 180},
    {128, 255, 0},
    {139, 69, 19},
}};

// Every word a generated caption can contain.
inline const std::vector<std::string>& caption_words() {
  static const std::vector<std::string> words = {
      "the",    "a",     "circle", "square",  "triangle", "red",    "green",  "blue",
      "yellow", "magenta", "cyan", "moves",   "curves",   "stays",  "still",  "left",
      "right",  "up",    "down",   "and",     "slowly",   "quickly", "enters", "leaves",
      "then",   "stops", "speeds", "slows",   "across",   "scene",  "from",   "to",
  };
  return words;
}

inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// Extracts (color, shape) from a subject hint such as "the red circle".
struct SubjectIdentity {
  std::optional<Rgb> color;
  std::optional<Shape> shape;
};

inline SubjectIdentity parse_subject(std::string_view hint) {
  SubjectIdentity id;
  for (const auto& w : split_words(hint)) {
    if (!id.color) id.color = color_from_name(w);
    if (!id.shape) id.shape = shape_from_name(w);
  }
  return id;
}

}  // namespace trajvid
