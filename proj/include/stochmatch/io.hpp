#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "stochmatch/image.hpp"
#include "stochmatch/landmark.hpp"

namespace stochmatch {

/// 17 significant digits: enough for exact double round-trips.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace detail {

inline std::string strip(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(strip(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(strip(cur));
  return out;
}

inline double parse_double(const std::string& s, const std::string& file, std::size_t line_no,
                           const char* what) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error(file + ":" + std::to_string(line_no) + ": cannot parse " + what +
                             " from '" + s + "'");
  }
  if (pos != s.size())
    throw std::runtime_error(file + ":" + std::to_string(line_no) + ": cannot parse " + what +
                             " from '" + s + "'");
  return v;
}

}  // namespace detail

/**
 * Landmark CSV: header `i,x,y`, contiguous indices from 0, one landmark per
 * row. Errors carry the file path and 1-based line number.
 */
inline LandmarkConfig load_landmarks(const std::filesystem::path& path) {
  std::ifstream in(path);
  const std::string name = path.string();
  if (!in) throw std::runtime_error(name + ": cannot open landmark file");
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw std::runtime_error(name + ": empty file, no landmarks");
  ++line_no;
  {
    const auto hdr = detail::split_csv(line);
    if (hdr.size() != 3 || hdr[0] != "i" || hdr[1] != "x" || hdr[2] != "y")
      throw std::runtime_error(name + ":1: expected header 'i,x,y'");
  }
  std::vector<std::pair<long, Vec2>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::strip(line).empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != 3)
      throw std::runtime_error(name + ":" + std::to_string(line_no) + ": expected 3 columns");
    const double di = detail::parse_double(cells[0], name, line_no, "index");
    const long idx = static_cast<long>(di);
    if (static_cast<double>(idx) != di || idx < 0)
      throw std::runtime_error(name + ":" + std::to_string(line_no) + ": bad landmark index '" +
                               cells[0] + "'");
    const double x = detail::parse_double(cells[1], name, line_no, "x coordinate");
    const double y = detail::parse_double(cells[2], name, line_no, "y coordinate");
    if (!std::isfinite(x) || !std::isfinite(y))
      throw std::runtime_error(name + ":" + std::to_string(line_no) + ": non-finite coordinate");
    rows.emplace_back(idx, Vec2{x, y});
  }
  if (rows.empty()) throw std::runtime_error(name + ": no landmarks");
  std::sort(rows.begin(), rows.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  LandmarkConfig cfg;
  cfg.points.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].first != static_cast<long>(i)) {
      if (i > 0 && rows[i].first == rows[i - 1].first)
        throw std::runtime_error(name + ": duplicate landmark index " +
                                 std::to_string(rows[i].first));
      throw std::runtime_error(name + ": landmark indices must be contiguous from 0 (missing " +
                               std::to_string(i) + ")");
    }
    cfg.points.push_back(rows[i].second);
  }
  return cfg;
}

inline void save_landmarks(const std::filesystem::path& path, const LandmarkConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << "i,x,y\n";
  for (std::size_t i = 0; i < cfg.size(); ++i)
    out << i << ',' << format_double(cfg[i].x) << ',' << format_double(cfg[i].y) << '\n';
}

/**
 * Trajectory rows `s,t,i,qx,qy,px,py` for one string labelled with iteration
 * index s. Momentum may be omitted (zeros written).
 */
inline void append_trajectory_csv(std::ostream& out, std::size_t s_index, const Trajectory& q,
                                  const MomentumPath* p) {
  const double dt = 1.0 / static_cast<double>(q.n_t - 1);
  for (std::size_t k = 0; k < q.n_t; ++k)
    for (std::size_t i = 0; i < q.n_points; ++i) {
      const Vec2 qq = q.at(k, i);
      const Vec2 pp = p ? p->at(k, i) : Vec2{};
      out << s_index << ',' << format_double(static_cast<double>(k) * dt) << ',' << i << ','
          << format_double(qq.x) << ',' << format_double(qq.y) << ',' << format_double(pp.x)
          << ',' << format_double(pp.y) << '\n';
    }
}

inline void save_trajectory_csv(const std::filesystem::path& path, std::size_t s_index,
                                const Trajectory& q, const MomentumPath* p) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << "s,t,i,qx,qy,px,py\n";
  append_trajectory_csv(out, s_index, q, p);
}

/**
 * PGM image input: P2 (ASCII) or P5 (binary, maxval < 65536), '#' comments in
 * the header, intensities rescaled to [0,1].
 */
inline ImageField load_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  const std::string name = path.string();
  if (!in) throw std::runtime_error(name + ": cannot open image file");

  auto next_token = [&]() -> std::string {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
      if (c == '#') {
        while ((c = in.get()) != EOF && c != '\n') {}
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) return tok;
        continue;
      }
      tok += static_cast<char>(c);
    }
    return tok;
  };

  const std::string magic = next_token();
  if (magic != "P2" && magic != "P5")
    throw std::runtime_error(name + ": bad magic '" + magic + "', expected P2 or P5");
  const std::string ws = next_token(), hs = next_token(), ms = next_token();
  if (ws.empty() || hs.empty() || ms.empty())
    throw std::runtime_error(name + ": truncated PGM header");
  const long w = std::strtol(ws.c_str(), nullptr, 10);
  const long h = std::strtol(hs.c_str(), nullptr, 10);
  const long maxval = std::strtol(ms.c_str(), nullptr, 10);
  if (w < 2 || h < 2 || maxval < 1 || maxval > 65535)
    throw std::runtime_error(name + ": bad PGM dimensions or maxval");

  ImageField img(static_cast<std::size_t>(w), static_cast<std::size_t>(h));
  const double scale = 1.0 / static_cast<double>(maxval);
  if (magic == "P2") {
    for (long iy = 0; iy < h; ++iy)
      for (long ix = 0; ix < w; ++ix) {
        const std::string tok = next_token();
        if (tok.empty()) throw std::runtime_error(name + ": truncated P2 payload");
        img.at(static_cast<std::size_t>(ix), static_cast<std::size_t>(iy)) =
            std::strtol(tok.c_str(), nullptr, 10) * scale;
      }
  } else {
    // single whitespace byte after maxval was already consumed by next_token
    const int bytes = maxval < 256 ? 1 : 2;
    std::vector<unsigned char> buf(static_cast<std::size_t>(w * h * bytes));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size()))
      throw std::runtime_error(name + ": truncated P5 payload");
    for (long iy = 0; iy < h; ++iy)
      for (long ix = 0; ix < w; ++ix) {
        const std::size_t o = static_cast<std::size_t>((iy * w + ix) * bytes);
        const unsigned v = bytes == 1 ? buf[o] : (static_cast<unsigned>(buf[o]) << 8) | buf[o + 1];
        img.at(static_cast<std::size_t>(ix), static_cast<std::size_t>(iy)) = v * scale;
      }
  }
  return img;
}

/// Binary P5 output, maxval 255, intensities clamped to [0,1].
inline void save_pgm(const std::filesystem::path& path, const ImageField& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << "P5\n" << img.grid.nx << ' ' << img.grid.ny << "\n255\n";
  for (std::size_t iy = 0; iy < img.grid.ny; ++iy)
    for (std::size_t ix = 0; ix < img.grid.nx; ++ix) {
      const double v = std::min(std::max(img.at(ix, iy), 0.0), 1.0);
      out.put(static_cast<char>(static_cast<unsigned char>(v * 255.0 + 0.5)));
    }
}

/// FNV-1a 64-bit content hash, used by run manifests.
inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace stochmatch
