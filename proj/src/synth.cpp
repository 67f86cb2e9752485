// Copyright 2026  smt-lab authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "smt/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "smt/image.hpp"

namespace smt {

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "validation" || name == "val") return Split::kValidation;
  if (name == "test") return Split::kTest;
  throw Error("InvalidArgument", "unknown split '" + name + "'");
}

}  // namespace smt

namespace smt::synth {

std::string to_string(Style style) {
  return style == Style::kGrandStaff ? "grandstaff" : "quartet";
}

Style style_from_string(const std::string& name) {
  if (name == "grandstaff") return Style::kGrandStaff;
  if (name == "quartet") return Style::kQuartet;
  throw Error("InvalidArgument", "unknown style '" + name + "'");
}

int spine_count(Style style) { return style == Style::kGrandStaff ? 2 : 4; }

namespace {

// ---------------------------------------------------------------------------
// Pitch helpers. Diatonic number = octave * 7 + step, c = 0 ... b = 6;
// kern spells c4 as "c", c5 as "cc", c3 as "C", c2 as "CC".

constexpr std::string_view kSteps = "cdefgab";

std::string kern_pitch(int diatonic) {
  const int octave = diatonic / 7;
  const char step = kSteps[static_cast<std::size_t>(diatonic % 7)];
  if (octave >= 4) return std::string(static_cast<std::size_t>(octave - 3), step);
  return std::string(static_cast<std::size_t>(4 - octave),
                     static_cast<char>(step - 'a' + 'A'));
}

struct Clef {
  std::string token;
  int bottom_line;  // diatonic number of the lowest staff line
};

Clef clef_for(Style style, int spine) {
  static const Clef treble{"*clefG2", 4 * 7 + 2};  // E4
  static const Clef bass{"*clefF4", 2 * 7 + 4};    // G2
  static const Clef alto{"*clefC3", 3 * 7 + 3};    // F3
  if (style == Style::kGrandStaff) return spine == 0 ? bass : treble;
  switch (spine) {
    case 0: return bass;
    case 1: return alto;
    default: return treble;
  }
}

Clef clef_from_token(const std::string& token) {
  if (token == "*clefF4") return {token, 2 * 7 + 4};
  if (token == "*clefC3") return {token, 3 * 7 + 3};
  return {"*clefG2", 4 * 7 + 2};
}

// ---------------------------------------------------------------------------
// Grammar

struct Duration {
  std::string recip;  // kern duration spelling, dots included
  int sixteenths;
};

const std::array<Duration, 8> kDurations = {{{"1", 16},
                                             {"2", 8},
                                             {"4", 4},
                                             {"8", 2},
                                             {"16", 1},
                                             {"2.", 12},
                                             {"4.", 6},
                                             {"8.", 3}}};

const Duration& pick_duration(int remaining, const GrammarConfig& g, Rng& rng) {
  // Weights favour quarters and eighths.
  static const std::array<double, 5> plain_weights = {0.5, 2.0, 4.0, 3.0, 1.0};
  std::vector<std::size_t> options;
  std::vector<double> weights;
  for (std::size_t i = 0; i < 5; ++i) {
    if (kDurations[i].sixteenths <= remaining) {
      options.push_back(i);
      weights.push_back(plain_weights[i]);
    }
  }
  if (rng.bernoulli(g.dotted_prob)) {
    for (std::size_t i = 5; i < kDurations.size(); ++i) {
      if (kDurations[i].sixteenths <= remaining) {
        options.push_back(i);
        weights.push_back(1.0);
      }
    }
  }
  double total = 0.0;
  for (double w : weights) total += w;
  double u = rng.uniform() * total;
  for (std::size_t k = 0; k < options.size(); ++k) {
    u -= weights[k];
    if (u < 0.0) return kDurations[options[k]];
  }
  return kDurations[options.back()];
}

struct Event {
  int onset;
  std::string token;
};

/// One voice filling a bar: a random walk over the clef's comfortable range.
std::vector<Event> voice_events(const Clef& clef, int bar, int& cursor_pitch,
                                const GrammarConfig& g, Rng& rng) {
  std::vector<Event> events;
  const int lo = clef.bottom_line - 2;
  const int hi = clef.bottom_line + 10;
  int t = 0;
  while (t < bar) {
    const auto& d = pick_duration(bar - t, g, rng);
    std::string token;
    if (rng.bernoulli(g.rest_prob)) {
      token = d.recip + "r";
    } else {
      cursor_pitch = std::clamp(cursor_pitch + rng.uniform_int(-3, 3), lo, hi);
      auto note = [&](int pitch) {
        std::string n = d.recip + kern_pitch(pitch);
        if (rng.bernoulli(g.accidental_prob)) n += rng.bernoulli(0.5) ? "#" : "-";
        return n;
      };
      token = note(cursor_pitch);
      if (rng.bernoulli(g.chord_prob) && cursor_pitch + 2 <= hi + 2)
        token += " " + note(cursor_pitch + 2);
    }
    events.push_back({t, std::move(token)});
    t += d.sixteenths;
  }
  return events;
}

/// Merges per-voice events into simultaneous records ("." where a voice has
/// no onset).
std::vector<kern::Record> align_voices(const std::vector<std::vector<Event>>& voices) {
  std::set<int> onsets;
  for (const auto& v : voices)
    for (const auto& e : v) onsets.insert(e.onset);
  std::vector<kern::Record> records;
  std::vector<std::size_t> next(voices.size(), 0);
  for (int t : onsets) {
    kern::Record rec;
    for (std::size_t v = 0; v < voices.size(); ++v) {
      if (next[v] < voices[v].size() && voices[v][next[v]].onset == t) {
        rec.push_back(voices[v][next[v]++].token);
      } else {
        rec.push_back(".");
      }
    }
    records.push_back(std::move(rec));
  }
  return records;
}

// ---------------------------------------------------------------------------
// Rendering

/// 3x5 digit glyphs, rows top to bottom, 3 bits per row (MSB = left).
constexpr std::array<std::array<std::uint8_t, 5>, 10> kDigits = {{
    {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7}, {5, 5, 7, 1, 1},
    {7, 4, 7, 1, 7}, {7, 4, 7, 5, 7}, {7, 1, 1, 1, 1}, {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7},
}};

class Canvas {
 public:
  explicit Canvas(GrayImage& img) : img_(img) {}

  /// Restricts drawing to columns [x0, x1).
  void clip(int x0, int x1) {
    clip0_ = x0;
    clip1_ = x1;
  }

  void fill(int x0, int y0, int x1, int y1, float v = 0.0f) {
    x0 = std::max({x0, clip0_, 0});
    x1 = std::min({x1, clip1_, static_cast<int>(img_.cols())});
    y0 = std::max(y0, 0);
    y1 = std::min(y1, static_cast<int>(img_.rows()));
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) img_(y, x) = v;
  }

  void outline(int x0, int y0, int x1, int y1) {
    fill(x0, y0, x1, y0 + 1);
    fill(x0, y1 - 1, x1, y1);
    fill(x0, y0, x0 + 1, y1);
    fill(x1 - 1, y0, x1, y1);
  }

  void digit(int d, int x, int y, int scale) {
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 3; ++c)
        if (kDigits[static_cast<std::size_t>(d)][static_cast<std::size_t>(r)] & (4 >> c))
          fill(x + c * scale, y + r * scale, x + (c + 1) * scale, y + (r + 1) * scale);
  }

 private:
  GrayImage& img_;
  int clip0_ = 0;
  int clip1_ = 1 << 30;
};

struct Staff {
  int top;     // band top row
  int bottom;  // band bottom row (exclusive)
  int line0;   // y of the lowest staff line
  int spacing;
  Clef clef;
  int y_of(int diatonic) const {
    const int y = line0 - (diatonic - clef.bottom_line) * spacing / 2;
    return std::clamp(y, top + spacing / 2, bottom - spacing / 2 - 1);
  }
};

struct ParsedNote {
  int recip = 4;
  int dots = 0;
  bool rest = false;
  int diatonic = 0;
  char accidental = 0;
};

ParsedNote parse_note(std::string_view tok) {
  ParsedNote n;
  std::size_t i = 0;
  int recip = 0;
  bool has_recip = false;
  while (i < tok.size() && std::isdigit(static_cast<unsigned char>(tok[i]))) {
    recip = recip * 10 + (tok[i] - '0');
    has_recip = true;
    ++i;
  }
  if (has_recip) n.recip = recip;
  while (i < tok.size() && tok[i] == '.') ++n.dots, ++i;
  if (i < tok.size() && tok[i] == 'r') {
    n.rest = true;
    return n;
  }
  if (i < tok.size() && std::isalpha(static_cast<unsigned char>(tok[i]))) {
    const char letter = tok[i];
    int reps = 0;
    while (i < tok.size() && tok[i] == letter) ++reps, ++i;
    const char lower = static_cast<char>(std::tolower(static_cast<unsigned char>(letter)));
    const auto step = kSteps.find(lower);
    const int s = step == std::string_view::npos ? 0 : static_cast<int>(step);
    const int octave = std::islower(static_cast<unsigned char>(letter)) ? 3 + reps : 4 - reps;
    n.diatonic = octave * 7 + s;
  }
  if (i < tok.size() && (tok[i] == '#' || tok[i] == '-' || tok[i] == 'n')) n.accidental = tok[i];
  return n;
}

int column_width(const std::string& cell, int s) {
  if (cell.empty() || cell == ".") return 0;
  if (cell.starts_with("**") || cell == "*" || cell == "*^" || cell == "*v" || cell == "*-")
    return 0;
  if (cell.starts_with('!')) return 0;
  if (cell.starts_with('=')) return s + 2;
  if (cell.starts_with("*clef")) return 3 * s;
  if (cell.starts_with("*k[")) {
    const auto n = std::count_if(cell.begin(), cell.end(),
                                 [](char c) { return c == '#' || c == '-'; });
    return static_cast<int>(std::max<std::ptrdiff_t>(1, n)) * s + 2;
  }
  if (cell.starts_with("*M")) return 3 * s;
  if (cell.starts_with('*')) return s;
  return 3 * s;
}

void draw_accidental(Canvas& cv, char acc, int x, int y, int s) {
  const int h = std::max(3, s);
  if (acc == '#') {
    cv.fill(x, y - h / 2, x + 1, y + h / 2 + 1);
    cv.fill(x + 2, y - h / 2, x + 3, y + h / 2 + 1);
    cv.fill(x - 1, y - 1, x + 4, y);
    cv.fill(x - 1, y + 1, x + 4, y + 2);
  } else if (acc == '-') {
    cv.fill(x, y - h, x + 1, y + 2);
    cv.fill(x, y, x + 3, y + 2);
  } else if (acc == 'n') {
    cv.fill(x, y - h / 2, x + 1, y + 1);
    cv.fill(x + 2, y, x + 3, y + h / 2 + 1);
    cv.fill(x, y, x + 3, y + 1);
  }
}

void draw_note_cell(Canvas& cv, const Staff& st, const std::string& cell, int x0, int x1) {
  const int s = st.spacing;
  const int cx = (x0 + x1) / 2;
  std::vector<ParsedNote> notes;
  std::istringstream ss(cell);
  std::string part;
  while (ss >> part) notes.push_back(parse_note(part));
  if (notes.empty()) return;
  const int head_w = std::max(3, s);
  const int head_h = std::max(2, s - 1);
  const int hx0 = cx - head_w / 2;
  const int hx1 = hx0 + head_w;

  if (notes.front().rest) {
    const auto& n = notes.front();
    const int mid = st.line0 - 2 * s;
    switch (n.recip) {
      case 1: cv.fill(hx0, mid - s, hx1, mid - s / 2); break;
      case 2: cv.fill(hx0, mid - s / 2, hx1, mid); break;
      case 4: cv.fill(cx - 1, mid - s - 1, cx + 1, mid + s + 1); break;
      case 8:
        cv.fill(cx - 1, mid - s / 2, cx + 1, mid + s);
        cv.fill(cx - 2, mid - s / 2, cx + 2, mid - s / 2 + 2);
        break;
      default:
        cv.fill(cx - 1, mid - s, cx + 1, mid + s + 1);
        cv.fill(cx - 2, mid - s, cx + 2, mid - s + 2);
        cv.fill(cx - 2, mid, cx + 2, mid + 2);
        break;
    }
    if (n.dots) cv.fill(hx1 + 1, mid - 1, hx1 + 3, mid + 1);
    return;
  }

  int y_top = 1 << 30, y_bottom = -1;
  for (const auto& n : notes) {
    const int y = st.y_of(n.diatonic);
    y_top = std::min(y_top, y);
    y_bottom = std::max(y_bottom, y);
    const int ya = y - head_h / 2;
    if (n.recip <= 2) cv.outline(hx0, ya, hx1, ya + head_h);
    else cv.fill(hx0, ya, hx1, ya + head_h);
    if (n.accidental) draw_accidental(cv, n.accidental, hx0 - 4, y, s);
    if (n.dots) cv.fill(hx1 + 1, y - 1, hx1 + 3, y + 1);
  }
  const auto& first = notes.front();
  if (first.recip >= 2) {
    const bool stem_up = (first.diatonic - st.clef.bottom_line) < 4;
    const int len = 3 * s;
    int flag_y;
    int sx;
    if (stem_up) {
      sx = hx1 - 1;
      cv.fill(sx, y_top - len, sx + 1, y_bottom);
      flag_y = y_top - len;
    } else {
      sx = hx0;
      cv.fill(sx, y_top, sx + 1, y_bottom + len);
      flag_y = y_bottom + len - 2;
    }
    const int flags = first.recip >= 32 ? 3 : first.recip >= 16 ? 2 : first.recip >= 8 ? 1 : 0;
    for (int f = 0; f < flags; ++f) {
      const int fy = stem_up ? flag_y + 2 * f : flag_y - 2 * f;
      cv.fill(sx, fy, sx + std::max(2, s / 2 + 1), fy + 1);
    }
  }
}

void draw_interpretation(Canvas& cv, const Staff& st, const std::string& cell, int x0, int x1) {
  const int s = st.spacing;
  const int top_line = st.line0 - 4 * s;
  if (cell.starts_with("*clef")) {
    const auto clef = clef_from_token(cell);
    const int cx = x0 + (x1 - x0) / 2;
    if (clef.token == "*clefG2") {
      cv.fill(cx, top_line - s, cx + 1, st.line0 + s + 1);
      cv.outline(cx - s / 2 - 1, st.line0 - 2 * s, cx + s / 2 + 1, st.line0 - s / 2);
    } else if (clef.token == "*clefF4") {
      cv.fill(cx - s / 2, top_line + s - 1, cx + s / 2, top_line + s + 1);
      cv.fill(cx + s / 2, top_line, cx + s / 2 + 1, top_line + 2 * s + 1);
      cv.fill(cx + s / 2 + 2, top_line + s / 2, cx + s / 2 + 3, top_line + s / 2 + 1);
      cv.fill(cx + s / 2 + 2, top_line + 3 * s / 2, cx + s / 2 + 3, top_line + 3 * s / 2 + 1);
    } else {
      cv.fill(x0 + 1, top_line, x0 + 3, st.line0 + 1);
      cv.fill(x0 + 4, top_line, x0 + 5, st.line0 + 1);
      cv.outline(x0 + 5, top_line, x1 - 1, st.line0 - 2 * s);
      cv.outline(x0 + 5, st.line0 - 2 * s, x1 - 1, st.line0 + 1);
    }
    return;
  }
  if (cell.starts_with("*k[")) {
    int x = x0 + 2;
    for (std::size_t i = 3; i + 1 < cell.size(); ++i) {
      const char c = cell[i];
      if (c != '#' && c != '-') continue;
      // The pitch letter precedes its accidental inside the key signature.
      const char letter = cell[i - 1];
      const auto step = kSteps.find(letter);
      int diatonic = st.clef.bottom_line + 4;
      if (step != std::string_view::npos) {
        diatonic = st.clef.bottom_line - ((st.clef.bottom_line % 7) - static_cast<int>(step));
        while (diatonic < st.clef.bottom_line + 1) diatonic += 7;
        while (diatonic > st.clef.bottom_line + 8) diatonic -= 7;
      }
      draw_accidental(cv, c, x + 1, st.y_of(diatonic), s);
      x += s;
    }
    return;
  }
  if (cell.starts_with("*M")) {
    const auto slash = cell.find('/');
    const int scale = std::max(1, s / 3);
    auto number = [&](std::string_view digits, int y) {
      int x = x0 + 1;
      for (char d : digits) {
        if (std::isdigit(static_cast<unsigned char>(d))) cv.digit(d - '0', x, y, scale);
        x += 4 * scale;
      }
    };
    if (slash != std::string::npos) {
      number(std::string_view(cell).substr(2, slash - 2), top_line);
      number(std::string_view(cell).substr(slash + 1), st.line0 - 2 * s + 1);
    } else {
      number(std::string_view(cell).substr(2), top_line + s);
    }
    return;
  }
  // Any other interpretation: a small tick above the staff.
  cv.fill(x0 + s / 2 - 1, top_line - s, x0 + s / 2 + 1, top_line - s / 2);
}

// ---------------------------------------------------------------------------
// Degradation helpers

GrayImage gaussian_blur(const GrayImage& in, double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[static_cast<std::size_t>(i + r)];
  }
  for (auto& v : k) v /= sum;
  const auto h = static_cast<int>(in.rows()), w = static_cast<int>(in.cols());
  GrayImage tmp(h, w), out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * in(y, std::clamp(x + i, 0, w - 1));
      tmp(y, x) = static_cast<float>(acc);
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * tmp(std::clamp(y + i, 0, h - 1), x);
      out(y, x) = static_cast<float>(acc);
    }
  return out;
}

GrayImage rotate(const GrayImage& in, double degrees) {
  const double a = degrees * std::numbers::pi / 180.0;
  const double ca = std::cos(a), sa = std::sin(a);
  const auto h = static_cast<int>(in.rows()), w = static_cast<int>(in.cols());
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  GrayImage out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double sx = ca * (x - cx) + sa * (y - cy) + cx;
      const double sy = -sa * (x - cx) + ca * (y - cy) + cy;
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      auto at = [&](int yy, int xx) -> double {
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 1.0;
        return in(yy, xx);
      };
      const double v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                       fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
      out(y, x) = static_cast<float>(v);
    }
  return out;
}

/// Dilates (bleed) or erodes (erase) the ink inside random 8x8 tiles.
GrayImage ink_bleed(const GrayImage& in, double prob, Rng& rng) {
  constexpr int kTile = 8;
  GrayImage out = in;
  const auto h = static_cast<int>(in.rows()), w = static_cast<int>(in.cols());
  for (int ty = 0; ty < h; ty += kTile)
    for (int tx = 0; tx < w; tx += kTile) {
      if (!rng.bernoulli(prob)) continue;
      const bool bleed = rng.bernoulli(0.5);
      for (int y = ty; y < std::min(h, ty + kTile); ++y)
        for (int x = tx; x < std::min(w, tx + kTile); ++x) {
          float v = in(y, x);
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int yy = std::clamp(y + dy, 0, h - 1), xx = std::clamp(x + dx, 0, w - 1);
              v = bleed ? std::min(v, in(yy, xx)) : std::max(v, in(yy, xx));
            }
          out(y, x) = v;
        }
    }
  return out;
}

/// Two-octave value noise mapped to [0.65, 1]: an aged paper tint.
GrayImage paper_texture(int h, int w, Rng& rng) {
  GrayImage tex = GrayImage::Zero(h, w);
  const int cells[] = {24, 6};
  const double amps[] = {0.7, 0.3};
  for (int o = 0; o < 2; ++o) {
    const int c = cells[o];
    const int gh = h / c + 2, gw = w / c + 2;
    Mat<double> grid(gh, gw);
    for (int i = 0; i < gh; ++i)
      for (int j = 0; j < gw; ++j) grid(i, j) = rng.uniform();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double gy = static_cast<double>(y) / c, gx = static_cast<double>(x) / c;
        const int iy = static_cast<int>(gy), ix = static_cast<int>(gx);
        const double fy = gy - iy, fx = gx - ix;
        const double v = (1 - fy) * ((1 - fx) * grid(iy, ix) + fx * grid(iy, ix + 1)) +
                         fy * ((1 - fx) * grid(iy + 1, ix) + fx * grid(iy + 1, ix + 1));
        tex(y, x) += static_cast<float>(amps[o] * v);
      }
  }
  return tex.unaryExpr([](float v) { return 0.65f + 0.35f * v; });
}

}  // namespace

// ---------------------------------------------------------------------------

ImageSample pseudo_render(const kern::KernDocument& doc, Style style, int height) {
  if (height < kMinImageHeight)
    throw Error("InvalidArgument", "image height below " + std::to_string(kMinImageHeight));
  const int n = spine_count(style);
  if (static_cast<int>(doc.spine_count()) != n)
    throw Error("SpineCountMismatch", to_string(style) + " needs " + std::to_string(n) +
                                          " spines, document has " +
                                          std::to_string(doc.spine_count()));
  const auto origins = kern::cell_origins(doc);

  const int band = height / n;
  const int s = std::max(2, band / 8);
  std::vector<Staff> staves;
  for (int j = 0; j < n; ++j) {
    Staff st;
    st.bottom = height - j * band;
    st.top = st.bottom - band;
    st.spacing = s;
    st.line0 = st.top + band / 2 + 2 * s;
    st.clef = clef_for(style, j);
    staves.push_back(st);
  }

  // Clefs may be overridden by *clef interpretations in the document.
  std::vector<int> widths(doc.records.size(), 0);
  for (std::size_t r = 0; r < doc.records.size(); ++r)
    for (const auto& cell : doc.records[r]) widths[r] = std::max(widths[r], column_width(cell, s));
  int total = s;
  for (int wdt : widths) total += wdt;
  total += s;
  const int width = std::max(kMinImageWidth, total);

  ImageSample out;
  out.pixels = GrayImage::Ones(height, width);
  out.kern = doc;
  Canvas cv(out.pixels);
  for (const auto& st : staves)
    for (int k = 0; k < 5; ++k) cv.fill(0, st.line0 - k * s, width, st.line0 - k * s + 1);

  int x = s;
  for (std::size_t r = 0; r < doc.records.size(); ++r) {
    if (widths[r] == 0) continue;
    const int x0 = x, x1 = x + widths[r];
    cv.clip(x0, x1);
    const auto& rec = doc.records[r];
    for (std::size_t c = 0; c < rec.size(); ++c) {
      const auto& cell = rec[c];
      auto& st = staves[static_cast<std::size_t>(origins[r][c])];
      if (cell.starts_with("*clef")) st.clef = clef_from_token(cell);
      if (column_width(cell, s) == 0) continue;
      if (cell.starts_with('=')) {
        const int bx = (x0 + x1) / 2;
        cv.fill(bx, st.line0 - 4 * s, bx + 1, st.line0 + 1);
        if (cell.starts_with("==")) cv.fill(bx + 2, st.line0 - 4 * s, bx + 3, st.line0 + 1);
      } else if (cell.starts_with('*')) {
        draw_interpretation(cv, st, cell, x0, x1);
      } else {
        draw_note_cell(cv, st, cell, x0, x1);
      }
    }
    x = x1;
  }
  return out;
}

// ---------------------------------------------------------------------------

void DegradationConfig::validate() const {
  for (const Range* r : {&blur_radius, &contrast, &noise_sigma, &rotation_deg}) {
    if (!std::isfinite(r->lo) || !std::isfinite(r->hi) || r->lo > r->hi)
      throw Error("InvalidConfig", "degradation ranges must be finite with lo <= hi");
  }
  if (blur_radius.lo < 0 || noise_sigma.lo < 0 || contrast.lo < 0)
    throw Error("InvalidConfig", "blur, noise and contrast must be non-negative");
  if (!(ink_bleed_prob >= 0 && ink_bleed_prob <= 1))
    throw Error("InvalidConfig", "ink bleed probability outside [0,1]");
  if (!(texture_blend >= 0 && texture_blend <= 1))
    throw Error("InvalidConfig", "texture blend weight outside [0,1]");
}

DegradationConfig DegradationConfig::identity() { return {}; }

DegradationConfig DegradationConfig::photocopy() {
  DegradationConfig c;
  c.blur_radius = {0.5, 1.5};
  c.contrast = {0.6, 0.9};
  c.noise_sigma = {0.02, 0.06};
  c.rotation_deg = {-1.0, 1.0};
  return c;
}

DegradationConfig DegradationConfig::old_print() {
  DegradationConfig c = photocopy();
  c.ink_bleed_prob = 0.15;
  c.texture_blend = 0.5;
  return c;
}

ImageSample degrade(const ImageSample& img, const DegradationConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  // Parameters are always drawn in the same order so a seed fixes the output.
  const double blur = cfg.blur_radius.sample(rng);
  const double contrast = cfg.contrast.sample(rng);
  const double noise = cfg.noise_sigma.sample(rng);
  const double angle = cfg.rotation_deg.sample(rng);

  ImageSample out = img;
  GrayImage& px = out.pixels;
  if (cfg.ink_bleed_prob > 0) px = ink_bleed(px, cfg.ink_bleed_prob, rng);
  if (blur > 0) px = gaussian_blur(px, blur / 2.0);
  if (angle != 0) px = rotate(px, angle);
  if (contrast != 1.0) px = px.unaryExpr([&](float v) {
    return static_cast<float>(0.5 + contrast * (v - 0.5));
  });
  if (cfg.texture_blend > 0) {
    const GrayImage tex = paper_texture(static_cast<int>(px.rows()), static_cast<int>(px.cols()), rng);
    const float wgt = static_cast<float>(cfg.texture_blend);
    px = px.cwiseProduct(tex.unaryExpr([wgt](float t) { return 1.0f - wgt + wgt * t; }));
  }
  if (noise > 0) {
    for (Eigen::Index i = 0; i < px.size(); ++i)
      px.data()[i] += static_cast<float>(rng.normal(0.0, noise));
  }
  px = px.cwiseMax(0.0f).cwiseMin(1.0f);
  return out;
}

// ---------------------------------------------------------------------------

std::vector<Split> split_by_piece(std::span<const std::string> piece_ids,
                                  const SplitRatios& ratios, std::uint64_t seed) {
  const double sum = ratios.train + ratios.validation + ratios.test;
  if (std::abs(sum - 1.0) > 1e-9 || ratios.train <= 0 || ratios.validation <= 0 || ratios.test <= 0)
    throw Error("InvalidConfig", "split ratios must be positive and sum to 1");
  std::vector<std::string> pieces(piece_ids.begin(), piece_ids.end());
  std::sort(pieces.begin(), pieces.end());
  pieces.erase(std::unique(pieces.begin(), pieces.end()), pieces.end());
  const auto n = static_cast<int>(pieces.size());
  if (n < 3)
    throw Error("InsufficientPieces", "need at least 3 distinct pieces, got " + std::to_string(n));

  Rng rng(derive_seed(seed, "split"));
  for (int i = n - 1; i > 0; --i) std::swap(pieces[static_cast<std::size_t>(i)],
                                            pieces[static_cast<std::size_t>(rng.uniform_int(0, i))]);
  const int n_val = std::max(1, static_cast<int>(std::lround(ratios.validation * n)));
  const int n_test = std::max(1, static_cast<int>(std::lround(ratios.test * n)));
  const int n_train = std::max(1, n - n_val - n_test);

  std::map<std::string, Split> assignment;
  for (int i = 0; i < n; ++i) {
    Split s = i < n_train ? Split::kTrain : i < n_train + n_val ? Split::kValidation : Split::kTest;
    assignment[pieces[static_cast<std::size_t>(i)]] = s;
  }
  std::vector<Split> out;
  out.reserve(piece_ids.size());
  for (const auto& id : piece_ids) out.push_back(assignment.at(id));
  return out;
}

void split_by_piece(std::span<ImageSample> samples, const SplitRatios& ratios, std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.piece_id);
  const auto splits = split_by_piece(ids, ratios, seed);
  for (std::size_t i = 0; i < samples.size(); ++i) samples[i].split = splits[i];
}

// ---------------------------------------------------------------------------

Piece generate_piece(Style style, int measures, const GrammarConfig& g, Rng& rng) {
  const int n = spine_count(style);
  Piece piece;
  piece.header.push_back(kern::Record(static_cast<std::size_t>(n), "**kern"));
  kern::Record clefs;
  std::vector<Clef> clef_list;
  for (int j = 0; j < n; ++j) {
    clef_list.push_back(clef_for(style, j));
    clefs.push_back(clef_list.back().token);
  }
  piece.header.push_back(clefs);
  static const std::array<std::string, 5> keys = {"*k[]", "*k[f#]", "*k[b-]", "*k[f#c#]",
                                                  "*k[b-e-]"};
  piece.header.push_back(kern::Record(static_cast<std::size_t>(n),
                                      keys[static_cast<std::size_t>(rng.uniform_int(0, 4))]));
  static const std::array<std::pair<std::string, int>, 3> meters = {
      {{"*M4/4", 16}, {"*M3/4", 12}, {"*M2/4", 8}}};
  const auto& meter = meters[static_cast<std::size_t>(rng.uniform_int(0, 2))];
  piece.header.push_back(kern::Record(static_cast<std::size_t>(n), meter.first));

  std::vector<int> cursor;
  for (const auto& c : clef_list) cursor.push_back(c.bottom_line + 4);

  for (int m = 0; m < measures; ++m) {
    std::vector<kern::Record> recs;
    // Which spines split into two voices for this measure.
    std::vector<bool> split(static_cast<std::size_t>(n), false);
    bool any_split = false;
    if (style == Style::kGrandStaff) {
      for (int j = 0; j < n; ++j) {
        split[static_cast<std::size_t>(j)] = rng.bernoulli(g.split_prob);
        any_split = any_split || split[static_cast<std::size_t>(j)];
      }
    }
    std::vector<std::vector<Event>> voices;
    for (int j = 0; j < n; ++j) {
      const auto& clef = clef_list[static_cast<std::size_t>(j)];
      voices.push_back(voice_events(clef, meter.second, cursor[static_cast<std::size_t>(j)], g, rng));
      if (split[static_cast<std::size_t>(j)]) {
        int second = cursor[static_cast<std::size_t>(j)] - 4;
        voices.push_back(voice_events(clef, meter.second, second, g, rng));
      }
    }
    if (any_split) {
      kern::Record open;
      for (int j = 0; j < n; ++j) open.push_back(split[static_cast<std::size_t>(j)] ? "*^" : "*");
      recs.push_back(open);
    }
    auto events = align_voices(voices);
    recs.insert(recs.end(), events.begin(), events.end());
    // Adjacent *v cells all join into one spine, so each pair is merged in
    // its own record.
    std::vector<bool> open_pair = split;
    for (int m = 0; m < n; ++m) {
      if (!split[static_cast<std::size_t>(m)]) continue;
      kern::Record close;
      for (int j = 0; j < n; ++j) {
        if (j == m) {
          close.push_back("*v");
          close.push_back("*v");
        } else {
          close.push_back("*");
          if (open_pair[static_cast<std::size_t>(j)]) close.push_back("*");
        }
      }
      open_pair[static_cast<std::size_t>(m)] = false;
      recs.push_back(close);
    }
    recs.push_back(kern::Record(static_cast<std::size_t>(n), "="));
    piece.measures.push_back(std::move(recs));
  }
  return piece;
}

kern::KernDocument excerpt(const Piece& piece, int first, int count) {
  if (first < 0 || count <= 0 || first + count > static_cast<int>(piece.measures.size()))
    throw Error("InvalidArgument", "excerpt range outside the piece");
  kern::KernDocument doc;
  doc.records = piece.header;
  for (int m = first; m < first + count; ++m) {
    const auto& recs = piece.measures[static_cast<std::size_t>(m)];
    doc.records.insert(doc.records.end(), recs.begin(), recs.end());
  }
  doc.records.push_back(kern::Record(piece.header.front().size(), "*-"));
  return doc;
}

std::vector<ImageSample> generate_corpus(const CorpusConfig& cfg) {
  if (cfg.n_pieces < 3)
    throw Error("InsufficientPieces", "need at least 3 pieces, got " + std::to_string(cfg.n_pieces));
  if (cfg.excerpts_per_piece < 1 || cfg.grammar.measures_per_excerpt < 1)
    throw Error("InvalidConfig", "excerpts_per_piece and measures_per_excerpt must be positive");
  std::vector<ImageSample> samples;
  for (int p = 0; p < cfg.n_pieces; ++p) {
    char pid[32];
    std::snprintf(pid, sizeof pid, "p%03d", p);
    Rng piece_rng(derive_seed(cfg.grammar_seed, pid));
    const int m = cfg.grammar.measures_per_excerpt;
    const Piece piece = generate_piece(cfg.style, cfg.excerpts_per_piece * m, cfg.grammar, piece_rng);
    for (int e = 0; e < cfg.excerpts_per_piece; ++e) {
      auto sample = pseudo_render(excerpt(piece, e * m, m), cfg.style, cfg.image_height);
      char sid[48];
      std::snprintf(sid, sizeof sid, "%s_e%02d", pid, e);
      sample.sample_id = sid;
      sample.piece_id = pid;
      if (cfg.degrade) {
        auto d = cfg.degradation;
        d.seed = derive_seed(cfg.grammar_seed, pid, static_cast<std::uint64_t>(e));
        sample = degrade(sample, d);
      }
      samples.push_back(std::move(sample));
    }
  }
  split_by_piece(std::span<ImageSample>(samples), cfg.ratios, cfg.split_seed);
  return samples;
}

std::vector<ManifestEntry> make_corpus(const CorpusConfig& cfg, const std::filesystem::path& out_dir) {
  auto samples = generate_corpus(cfg);
  std::filesystem::create_directories(out_dir / "images");
  std::filesystem::create_directories(out_dir / "kern");
  std::vector<ManifestEntry> entries;
  for (const auto& s : samples) {
    ManifestEntry e;
    e.image_path = "images/" + s.sample_id + ".png";
    e.kern_path = "kern/" + s.sample_id + ".krn";
    e.piece_id = s.piece_id;
    e.split = s.split;
    image::write_png((out_dir / e.image_path).string(), s.pixels);
    std::ofstream krn(out_dir / e.kern_path, std::ios::binary);
    krn << kern::to_text(s.kern);
    if (!krn) throw Error("IO", "cannot write " + (out_dir / e.kern_path).string());
    entries.push_back(std::move(e));
  }
  write_manifest(out_dir / "manifest.tsv", entries);
  return entries;
}

std::string format_manifest(std::span<const ManifestEntry> entries) {
  std::string out;
  for (const auto& e : entries)
    out += e.image_path + '\t' + e.kern_path + '\t' + e.piece_id + '\t' + smt::to_string(e.split) + '\n';
  return out;
}

std::vector<ManifestEntry> parse_manifest(std::string_view text) {
  std::vector<ManifestEntry> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string field;
    while (std::getline(ls, field, '\t')) f.push_back(field);
    if (f.size() != 4)
      throw Error("ManifestFormat", "line " + std::to_string(line_no) + ": expected 4 fields");
    out.push_back({f[0], f[1], f[2], split_from_string(f[3])});
  }
  return out;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IO", "cannot read manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str());
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IO", "cannot write manifest " + path.string());
  out << format_manifest(entries);
}

std::vector<ImageSample> load_samples(const std::filesystem::path& manifest_path,
                                      std::optional<Split> only, int image_height) {
  const auto base = manifest_path.parent_path();
  std::vector<ImageSample> out;
  for (const auto& e : read_manifest(manifest_path)) {
    if (only && e.split != *only) continue;
    ImageSample s;
    const auto img_path = base / e.image_path;
    s.pixels = image::load_normalized(img_path.string(), image_height);
    std::ifstream krn(base / e.kern_path, std::ios::binary);
    if (!krn) throw Error("IO", "cannot read " + (base / e.kern_path).string());
    std::stringstream ss;
    ss << krn.rdbuf();
    s.kern = kern::parse_kern(ss.str());
    s.sample_id = std::filesystem::path(e.image_path).stem().string();
    s.piece_id = e.piece_id;
    s.split = e.split;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace smt::synth
