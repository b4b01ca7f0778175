#pragma once

// File formats: xyz / ASCII PLY point clouds, the JSON run configuration,
// the descriptor CSV table and newline-delimited JSON metrics logs.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sipf/descriptors.hpp"
#include "sipf/error.hpp"
#include "sipf/geometry.hpp"
#include "sipf/trainer.hpp"

namespace sipf::io {

using json = nlohmann::ordered_json;

enum class CloudFormat { xyz, ply_ascii };

inline CloudFormat format_for(const std::filesystem::path& path) {
  return path.extension() == ".ply" ? CloudFormat::ply_ascii : CloudFormat::xyz;
}

namespace detail {

inline std::string line_error(std::size_t line, const std::string& what) {
  return "line " + std::to_string(line) + ": " + what;
}

/// Whitespace-separated finite doubles; throws with the line number otherwise.
inline std::vector<double> parse_numbers(const std::string& text, std::size_t line) {
  std::vector<double> out;
  std::istringstream ss(text);
  std::string tok;
  while (ss >> tok) {
    // strtod keeps subnormals that stod reports as out of range.
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size() || !std::isfinite(v))
      throw Error(ErrorKind::invalid_input, line_error(line, "bad number '" + tok + "'"));
    out.push_back(v);
  }
  return out;
}

inline PointCloud make_cloud(std::vector<Vec3> pts, std::vector<Vec3> nrm, bool with_normals,
                             const std::vector<std::size_t>& lines) {
  if (!with_normals) return PointCloud(std::move(pts));
  for (std::size_t i = 0; i < nrm.size(); ++i) {
    const double n = nrm[i].norm();
    if (!(n > 0.0)) throw Error(ErrorKind::invalid_input, line_error(lines[i], "zero-length normal"));
    nrm[i] /= n;
  }
  return PointCloud(std::move(pts), std::move(nrm));
}

}  // namespace detail

/// Rows of 3 (positions) or 6 (positions + normals) numbers. Blank lines and
/// lines starting with '#' are skipped. Normals are re-normalized.
inline PointCloud parse_xyz(std::istream& in) {
  std::vector<Vec3> pts, nrm;
  std::vector<std::size_t> lines;
  std::string text;
  int width = 0;
  for (std::size_t line = 1; std::getline(in, text); ++line) {
    const auto first = text.find_first_not_of(" \t\r");
    if (first == std::string::npos || text[first] == '#') continue;
    const auto v = detail::parse_numbers(text, line);
    if (v.size() != 3 && v.size() != 6)
      throw Error(ErrorKind::invalid_input,
                  detail::line_error(line, "expected 3 or 6 values, got " + std::to_string(v.size())));
    if (width == 0) width = static_cast<int>(v.size());
    if (static_cast<int>(v.size()) != width)
      throw Error(ErrorKind::invalid_input, detail::line_error(line, "inconsistent column count"));
    pts.emplace_back(v[0], v[1], v[2]);
    if (width == 6) nrm.emplace_back(v[3], v[4], v[5]);
    lines.push_back(line);
  }
  if (pts.size() < 2) throw Error(ErrorKind::invalid_input, "cloud needs at least 2 points");
  return detail::make_cloud(std::move(pts), std::move(nrm), width == 6, lines);
}

/// ASCII PLY with a vertex element carrying float/double x, y, z and
/// optionally nx, ny, nz. Other vertex properties are ignored; binary PLY is
/// rejected.
inline PointCloud parse_ply(std::istream& in) {
  std::string text;
  std::size_t line = 0;
  auto next = [&](std::string& s) {
    if (!std::getline(in, s)) return false;
    ++line;
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return true;
  };
  if (!next(text) || text != "ply") throw Error(ErrorKind::invalid_input, "missing 'ply' magic");

  std::size_t vertex_count = 0;
  bool in_vertex = false, seen_vertex = false, ascii = false;
  std::vector<std::string> props;
  while (true) {
    if (!next(text)) throw Error(ErrorKind::invalid_input, "unterminated PLY header");
    std::istringstream ss(text);
    std::string key;
    ss >> key;
    if (key == "end_header") break;
    if (key == "comment" || key == "obj_info" || key.empty()) continue;
    if (key == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt != "ascii")
        throw Error(ErrorKind::invalid_input,
                    detail::line_error(line, "binary PLY ('" + fmt + "') is not supported; convert to ascii"));
      ascii = true;
    } else if (key == "element") {
      std::string name;
      long long count = -1;
      ss >> name >> count;
      in_vertex = name == "vertex";
      if (in_vertex) {
        if (seen_vertex || count < 0)
          throw Error(ErrorKind::invalid_input, detail::line_error(line, "bad vertex element"));
        seen_vertex = true;
        vertex_count = static_cast<std::size_t>(count);
      } else if (!seen_vertex) {
        throw Error(ErrorKind::invalid_input,
                    detail::line_error(line, "vertex element must come first"));
      }
    } else if (key == "property") {
      std::string type, name;
      ss >> type;
      if (type == "list") {
        if (in_vertex)
          throw Error(ErrorKind::invalid_input, detail::line_error(line, "list property on vertex"));
        continue;
      }
      ss >> name;
      if (in_vertex) {
        const bool coord = name == "x" || name == "y" || name == "z" || name == "nx" ||
                           name == "ny" || name == "nz";
        if (coord && type != "float" && type != "double" && type != "float32" && type != "float64")
          throw Error(ErrorKind::invalid_input,
                      detail::line_error(line, "property " + name + " must be float"));
        props.push_back(name);
      }
    } else {
      throw Error(ErrorKind::invalid_input, detail::line_error(line, "unknown header keyword '" + key + "'"));
    }
  }
  if (!ascii) throw Error(ErrorKind::invalid_input, "PLY header lacks a format line");
  auto find = [&](const std::string& n) -> int {
    for (std::size_t i = 0; i < props.size(); ++i)
      if (props[i] == n) return static_cast<int>(i);
    return -1;
  };
  const int ix = find("x"), iy = find("y"), iz = find("z");
  const int inx = find("nx"), iny = find("ny"), inz = find("nz");
  if (ix < 0 || iy < 0 || iz < 0) throw Error(ErrorKind::invalid_input, "PLY vertex lacks x, y, z");
  const bool with_normals = inx >= 0 && iny >= 0 && inz >= 0;
  if (!with_normals && (inx >= 0 || iny >= 0 || inz >= 0))
    throw Error(ErrorKind::invalid_input, "PLY declares only some of nx, ny, nz");

  std::vector<Vec3> pts, nrm;
  std::vector<std::size_t> lines;
  while (pts.size() < vertex_count) {
    if (!next(text)) throw Error(ErrorKind::invalid_input, "PLY ends before all vertices were read");
    const auto v = detail::parse_numbers(text, line);
    if (v.size() != props.size())
      throw Error(ErrorKind::invalid_input,
                  detail::line_error(line, "expected " + std::to_string(props.size()) + " values"));
    pts.emplace_back(v[ix], v[iy], v[iz]);
    if (with_normals) nrm.emplace_back(v[inx], v[iny], v[inz]);
    lines.push_back(line);
  }
  if (pts.size() < 2) throw Error(ErrorKind::invalid_input, "cloud needs at least 2 points");
  return detail::make_cloud(std::move(pts), std::move(nrm), with_normals, lines);
}

inline PointCloud read_cloud(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::invalid_input, "cannot open " + path.string());
  try {
    return format_for(path) == CloudFormat::ply_ascii ? parse_ply(in) : parse_xyz(in);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.message_only(), e.index());
  }
}

/// Writes through a sibling temp file and renames it into place.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::invalid_input, "cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw Error(ErrorKind::invalid_input, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
  std::size_t k = 20;
  double delta = kDefaultDelta;
  DescriptorMask descriptor_mask = DescriptorMask::sipf;
  std::uint64_t seed = 0;
  std::size_t epochs = 200;
  double learning_rate = 0.1;
  int quadrature_order = kDefaultQuadratureOrder;
  BinghamLossKind bingham_loss_kind = BinghamLossKind::entropy;
  // Toy-task sizing.
  ShadowSource shadow_source = ShadowSource::mode;
  LrSchedule lr_schedule = LrSchedule::constant;
  std::size_t batch_size = 1;
  std::size_t c_out = 16;
  std::size_t hidden = 16;
  std::size_t n_clouds = 16;
  std::size_t points_per_cloud = 128;
  double noise_sigma = 0.0;

  ToyTaskConfig toy() const {
    ToyTaskConfig t;
    t.epochs = epochs;
    t.learning_rate = learning_rate;
    t.batch_size = batch_size;
    t.k = k;
    t.delta = delta;
    t.mask = descriptor_mask;
    t.seed = seed;
    t.quadrature_order = quadrature_order;
    t.bingham_loss_kind = bingham_loss_kind;
    t.c_out = c_out;
    t.hidden = hidden;
    t.shadow_source = shadow_source;
    t.lr_schedule = lr_schedule;
    return t;
  }
};

inline std::string to_string(BinghamLossKind k) {
  return k == BinghamLossKind::entropy ? "entropy" : "nll_mode";
}

inline std::string to_string(ShadowSource s) {
  return s == ShadowSource::mode ? "mode" : "sample";
}

inline std::string to_string(LrSchedule s) {
  return s == LrSchedule::cosine ? "cosine" : "constant";
}

inline json to_json(const RunConfig& c) {
  return json{{"k", c.k},
              {"delta", c.delta},
              {"descriptor_mask", std::string(sipf::to_string(c.descriptor_mask))},
              {"seed", c.seed},
              {"epochs", c.epochs},
              {"learning_rate", c.learning_rate},
              {"quadrature_order", c.quadrature_order},
              {"bingham_loss_kind", to_string(c.bingham_loss_kind)},
              {"shadow_source", to_string(c.shadow_source)},
              {"lr_schedule", to_string(c.lr_schedule)},
              {"batch_size", c.batch_size},
              {"c_out", c.c_out},
              {"hidden", c.hidden},
              {"n_clouds", c.n_clouds},
              {"points_per_cloud", c.points_per_cloud},
              {"noise_sigma", c.noise_sigma}};
}

/// Validates every field before anything is computed. Unknown keys, wrong
/// types and out-of-range values fail with the field name.
inline RunConfig parse_config(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::invalid_input, "config must be a JSON object");
  RunConfig c;
  auto fail = [](const std::string& key, const std::string& why) {
    throw Error(ErrorKind::invalid_input, "config field '" + key + "': " + why);
  };
  auto count = [&](const std::string& key, const json& v, std::size_t min) {
    if (!v.is_number_integer()) fail(key, "expected an integer");
    if (v.get<long long>() < static_cast<long long>(min)) fail(key, "must be >= " + std::to_string(min));
    return v.get<std::size_t>();
  };
  auto real = [&](const std::string& key, const json& v) {
    if (!v.is_number()) fail(key, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(key, "must be finite");
    return d;
  };
  for (const auto& [key, v] : j.items()) {
    if (key == "k") c.k = count(key, v, 1);
    else if (key == "delta") {
      c.delta = real(key, v);
      if (c.delta < 0.0) fail(key, "must be >= 0");
    } else if (key == "descriptor_mask") {
      if (!v.is_string()) fail(key, "expected a string");
      try {
        c.descriptor_mask = parse_mask(v.get<std::string>());
      } catch (const Error&) {
        fail(key, "must be one of sipf, ppf, sipf-no-direction");
      }
    } else if (key == "seed") {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
        fail(key, "expected a non-negative integer");
      c.seed = v.get<std::uint64_t>();
    } else if (key == "epochs") c.epochs = count(key, v, 1);
    else if (key == "learning_rate") {
      c.learning_rate = real(key, v);
      if (!(c.learning_rate > 0.0)) fail(key, "must be > 0");
    } else if (key == "quadrature_order") {
      c.quadrature_order = static_cast<int>(count(key, v, kMinQuadratureOrder));
    } else if (key == "bingham_loss_kind") {
      if (!v.is_string()) fail(key, "expected a string");
      const auto s = v.get<std::string>();
      if (s == "entropy") c.bingham_loss_kind = BinghamLossKind::entropy;
      else if (s == "nll_mode") c.bingham_loss_kind = BinghamLossKind::nll_mode;
      else fail(key, "must be 'entropy' or 'nll_mode'");
    } else if (key == "shadow_source") {
      if (!v.is_string()) fail(key, "expected a string");
      const auto s = v.get<std::string>();
      if (s == "mode") c.shadow_source = ShadowSource::mode;
      else if (s == "sample") c.shadow_source = ShadowSource::sample;
      else fail(key, "must be 'mode' or 'sample'");
    } else if (key == "lr_schedule") {
      if (!v.is_string()) fail(key, "expected a string");
      const auto s = v.get<std::string>();
      if (s == "constant") c.lr_schedule = LrSchedule::constant;
      else if (s == "cosine") c.lr_schedule = LrSchedule::cosine;
      else fail(key, "must be 'constant' or 'cosine'");
    } else if (key == "batch_size") c.batch_size = count(key, v, 1);
    else if (key == "c_out") c.c_out = count(key, v, 1);
    else if (key == "hidden") c.hidden = count(key, v, 0);
    else if (key == "n_clouds") c.n_clouds = count(key, v, 1);
    else if (key == "points_per_cloud") {
      c.points_per_cloud = count(key, v, 32);
      if (c.points_per_cloud % 2 != 0) fail(key, "must be even");
    } else if (key == "noise_sigma") {
      c.noise_sigma = real(key, v);
      if (c.noise_sigma < 0.0) fail(key, "must be >= 0");
    } else {
      fail(key, "unknown key");
    }
  }
  return c;
}

inline RunConfig read_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::invalid_input, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::invalid_input, "config " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

// ---------------------------------------------------------------------------
// Descriptor table

struct DescriptorRow {
  std::size_t ref = 0, nbr = 0;
  Sipf8 value = Sipf8::Zero();
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline constexpr const char* kDescriptorHeader =
    "ref_index,nbr_index,ppf1,ppf2,ppf3,ppf4,sippf1,sippf2,sippf3,sippf4";

inline std::string descriptor_csv(const std::vector<DescriptorRow>& rows) {
  std::string out = kDescriptorHeader;
  out += '\n';
  for (const auto& r : rows) {
    out += std::to_string(r.ref);
    out += ',';
    out += std::to_string(r.nbr);
    for (int i = 0; i < 8; ++i) {
      out += ',';
      out += format_double(r.value[i]);
    }
    out += '\n';
  }
  return out;
}

inline std::vector<DescriptorRow> parse_descriptor_csv(std::istream& in) {
  std::string text;
  if (!std::getline(in, text) || text != kDescriptorHeader)
    throw Error(ErrorKind::invalid_input, "descriptor CSV header mismatch");
  std::vector<DescriptorRow> rows;
  for (std::size_t line = 2; std::getline(in, text); ++line) {
    if (text.empty()) continue;
    std::replace(text.begin(), text.end(), ',', ' ');
    const auto v = detail::parse_numbers(text, line);
    if (v.size() != 10) throw Error(ErrorKind::invalid_input, detail::line_error(line, "expected 10 fields"));
    DescriptorRow r;
    r.ref = static_cast<std::size_t>(v[0]);
    r.nbr = static_cast<std::size_t>(v[1]);
    for (int i = 0; i < 8; ++i) r.value[i] = v[static_cast<std::size_t>(i) + 2];
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Metrics log

inline json quaternion_json(const UnitQuaternion& q) { return json::array({q.w, q.x, q.y, q.z}); }

inline json to_json(const EpochMetrics& m) {
  return json{{"epoch", m.epoch},
              {"task_loss", m.task_loss},
              {"bingham_loss", m.bingham_loss},
              {"total_loss", m.total_loss},
              {"accuracy", m.accuracy},
              {"rg_quaternion", quaternion_json(m.rg)}};
}

/// One JSON object per epoch, newline-delimited.
inline std::string metrics_log(const std::vector<EpochMetrics>& log) {
  std::string out;
  for (const auto& m : log) {
    out += to_json(m).dump();
    out += '\n';
  }
  return out;
}

}  // namespace sipf::io
