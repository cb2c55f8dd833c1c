#include "avatarforge/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "avatarforge/digest.hpp"
#include "avatarforge/error.hpp"

namespace avatarforge {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(RendererKind r) { return r == RendererKind::nerf ? "nerf" : "gs"; }
std::string to_string(Protocol p) { return p == Protocol::A ? "A" : "B"; }

RendererKind parse_renderer(const std::string& name) {
  if (name == "nerf") return RendererKind::nerf;
  if (name == "gs") return RendererKind::gs;
  throw InvalidArgument("unknown renderer '" + name + "'");
}

Protocol parse_protocol(const std::string& name) {
  if (name == "A" || name == "a") return Protocol::A;
  if (name == "B" || name == "b") return Protocol::B;
  throw InvalidArgument("unknown protocol '" + name + "'");
}

void PipelineConfig::validate() const {
  if (dataset.empty()) throw InvalidArgument("config: dataset is required");
  if (output.empty()) throw InvalidArgument("config: out is required");
  if (protocol == Protocol::B && target_dataset.empty())
    throw InvalidArgument("config: protocol B requires target_dataset");
  if (transform) transform->validate();
  if (workers < 1) throw InvalidArgument("config: workers must be >= 1");
  if (transform_timeout_seconds < 1) throw InvalidArgument("config: transform_timeout must be >= 1");
  if (nerf.iterations < 1 || nerf.batch_rays < 1 || nerf.samples < 1 || nerf.width < 2 || nerf.depth < 1)
    throw InvalidArgument("config: nerf settings must be positive");
  if (gs.iterations < 1 || gs.init_count < 1 || gs.max_gaussians < 1) throw InvalidArgument("config: gs settings must be positive");
  if (gs.max_sh_degree < 0 || gs.max_sh_degree > 3) throw InvalidArgument("config: gs_max_sh_degree must be in [0, 3]");
}

namespace {

json to_flat(const PipelineConfig& c) {
  json j;
  j["dataset"] = c.dataset.string();
  j["renderer"] = to_string(c.renderer);
  j["transform"] = c.transform ? faceswap::to_string(c.transform->variant) : "none";
  j["target"] = c.transform && c.transform->target ? c.transform->target->string() : "";
  j["external_cmd"] = c.transform ? c.transform->command_template : "";
  j["protocol"] = to_string(c.protocol);
  j["target_dataset"] = c.target_dataset.string();
  j["out"] = c.output.string();
  j["seed"] = c.seed;
  j["overwrite"] = c.overwrite;
  j["workers"] = c.workers;
  j["transform_timeout"] = c.transform_timeout_seconds;
  j["background"] = {c.background[0], c.background[1], c.background[2]};
  j["perceptual_cmd"] = c.perceptual_cmd;
  j["nerf_iterations"] = c.nerf.iterations;
  j["nerf_batch_rays"] = c.nerf.batch_rays;
  j["nerf_lr"] = c.nerf.lr;
  j["nerf_lr_final_ratio"] = c.nerf.lr_final_ratio;
  j["nerf_samples"] = c.nerf.samples;
  j["nerf_width"] = c.nerf.width;
  j["nerf_depth"] = c.nerf.depth;
  j["nerf_pos_freqs"] = c.nerf.pos_freqs;
  j["nerf_dir_freqs"] = c.nerf.dir_freqs;
  j["gs_iterations"] = c.gs.iterations;
  j["gs_init_count"] = c.gs.init_count;
  j["gs_init_opacity"] = c.gs.init_opacity;
  j["gs_densify_grad_threshold"] = c.gs.densify_grad_threshold;
  j["gs_max_gaussians"] = c.gs.max_gaussians;
  j["gs_max_sh_degree"] = c.gs.max_sh_degree;
  return j;
}

template <typename T>
T get(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw SchemaError("config: wrong type for '" + key + "'");
  }
}

PipelineConfig from_flat(const json& j) {
  if (!j.is_object()) throw SchemaError("config: expected an object");
  PipelineConfig c;
  std::string transform = "identity", target, external_cmd;
  for (const auto& [key, v] : j.items()) {
    if (key == "dataset") c.dataset = get<std::string>(v, key);
    else if (key == "renderer") c.renderer = parse_renderer(get<std::string>(v, key));
    else if (key == "transform") transform = get<std::string>(v, key);
    else if (key == "target") target = get<std::string>(v, key);
    else if (key == "external_cmd") external_cmd = get<std::string>(v, key);
    else if (key == "protocol") c.protocol = parse_protocol(get<std::string>(v, key));
    else if (key == "target_dataset") c.target_dataset = get<std::string>(v, key);
    else if (key == "out") c.output = get<std::string>(v, key);
    else if (key == "seed") c.seed = get<std::uint64_t>(v, key);
    else if (key == "overwrite") c.overwrite = get<bool>(v, key);
    else if (key == "workers") c.workers = get<int>(v, key);
    else if (key == "transform_timeout") c.transform_timeout_seconds = get<int>(v, key);
    else if (key == "background") {
      if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s == "white") c.background = kWhite;
        else if (s == "black") c.background = {0, 0, 0};
        else throw SchemaError("config: background must be white, black or [r, g, b]");
      } else {
        const auto a = get<std::vector<double>>(v, key);
        if (a.size() != 3) throw SchemaError("config: background needs 3 values");
        c.background = {a[0], a[1], a[2]};
      }
    }
    else if (key == "perceptual_cmd") c.perceptual_cmd = get<std::string>(v, key);
    else if (key == "nerf_iterations") c.nerf.iterations = get<int>(v, key);
    else if (key == "nerf_batch_rays") c.nerf.batch_rays = get<int>(v, key);
    else if (key == "nerf_lr") c.nerf.lr = get<double>(v, key);
    else if (key == "nerf_lr_final_ratio") c.nerf.lr_final_ratio = get<double>(v, key);
    else if (key == "nerf_samples") c.nerf.samples = get<int>(v, key);
    else if (key == "nerf_width") c.nerf.width = get<int>(v, key);
    else if (key == "nerf_depth") c.nerf.depth = get<int>(v, key);
    else if (key == "nerf_pos_freqs") c.nerf.pos_freqs = get<int>(v, key);
    else if (key == "nerf_dir_freqs") c.nerf.dir_freqs = get<int>(v, key);
    else if (key == "gs_iterations") c.gs.iterations = get<int>(v, key);
    else if (key == "gs_init_count") c.gs.init_count = get<int>(v, key);
    else if (key == "gs_init_opacity") c.gs.init_opacity = get<double>(v, key);
    else if (key == "gs_densify_grad_threshold") c.gs.densify_grad_threshold = get<double>(v, key);
    else if (key == "gs_max_gaussians") c.gs.max_gaussians = get<int>(v, key);
    else if (key == "gs_max_sh_degree") c.gs.max_sh_degree = get<int>(v, key);
    else throw SchemaError("config: unknown key '" + key + "'");
  }
  if (transform == "none") {
    c.transform.reset();
  } else {
    faceswap::TransformSpec spec;
    spec.variant = faceswap::parse_variant(transform);
    spec.command_template = external_cmd;
    if (!target.empty()) spec.target = target;
    c.transform = spec;
  }
  return c;
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// Parses one TOML value: a basic or literal string, boolean, number or flat array.
json toml_value(const std::string& text, int line) {
  const std::string v = trim(text);
  auto fail = [&] { throw FormatError("config line " + std::to_string(line) + ": bad value '" + v + "'"); };
  if (v.empty()) fail();
  if (v.front() == '"') {
    std::string out;
    std::size_t i = 1;
    for (; i < v.size() && v[i] != '"'; ++i) {
      if (v[i] == '\\' && i + 1 < v.size()) {
        const char e = v[++i];
        out += e == 'n' ? '\n' : e == 't' ? '\t' : e;
      } else {
        out += v[i];
      }
    }
    if (i != v.size() - 1) fail();
    return out;
  }
  if (v.front() == '\'') {
    if (v.size() < 2 || v.back() != '\'') fail();
    return v.substr(1, v.size() - 2);
  }
  if (v == "true") return true;
  if (v == "false") return false;
  if (v.front() == '[') {
    if (v.back() != ']') fail();
    json arr = json::array();
    std::stringstream items(v.substr(1, v.size() - 2));
    for (std::string item; std::getline(items, item, ',');)
      if (!trim(item).empty()) arr.push_back(toml_value(item, line));
    return arr;
  }
  std::string num;
  for (char ch : v)
    if (ch != '_') num += ch;
  try {
    return json::parse(num);
  } catch (const json::exception&) {
    fail();
  }
  return nullptr;
}

std::string strip_comment(const std::string& line) {
  bool in_basic = false, in_literal = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (ch == '\\' && in_basic) ++i;
    else if (ch == '"' && !in_literal) in_basic = !in_basic;
    else if (ch == '\'' && !in_basic) in_literal = !in_literal;
    else if (ch == '#' && !in_basic && !in_literal) return line.substr(0, i);
  }
  return line;
}

}  // namespace

std::string config_to_json(const PipelineConfig& cfg) { return to_flat(cfg).dump(2) + "\n"; }

std::string PipelineConfig::fingerprint() const {
  json j = to_flat(*this);
  j.erase("out");
  j.erase("overwrite");
  j.erase("workers");
  if (transform && transform->variant != faceswap::TransformSpec::Variant::identity) j["target"] = transform->fingerprint();
  return sha256_hex(j.dump());
}

PipelineConfig parse_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  return from_flat(j);
}

PipelineConfig parse_config_toml(const std::string& text) {
  json j = json::object();
  std::istringstream in(text);
  int n = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++n;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') throw SchemaError("config line " + std::to_string(n) + ": tables are not supported");
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config line " + std::to_string(n) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (key.size() >= 2 && (key.front() == '"' || key.front() == '\'')) key = key.substr(1, key.size() - 2);
    if (key.empty()) throw FormatError("config line " + std::to_string(n) + ": empty key");
    if (j.contains(key)) throw FormatError("config line " + std::to_string(n) + ": duplicate key '" + key + "'");
    j[key] = toml_value(line.substr(eq + 1), n);
  }
  return from_flat(j);
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  const PipelineConfig cfg = path.extension() == ".json" ? parse_config_json(ss.str()) : parse_config_toml(ss.str());
  return cfg;
}

}  // namespace avatarforge
