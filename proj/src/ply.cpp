#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "avatarforge/error.hpp"
#include "avatarforge/gsplat.hpp"

namespace avatarforge::gs {
namespace {

static_assert(std::endian::native == std::endian::little, "PLY I/O assumes a little-endian host");

struct PlyProperty {
  std::string name;
  std::string type;
  std::size_t offset = 0;
};

struct PlyHeader {
  std::size_t vertex_count = 0;
  std::vector<PlyProperty> properties;
  std::size_t stride = 0;
  std::map<std::string, std::string> comments;
};

std::size_t type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32") return 4;
  if (t == "double" || t == "float64") return 8;
  throw FormatError("unsupported PLY property type '" + t + "'");
}

PlyHeader read_header(std::istream& in, const std::string& where) {
  std::string line;
  if (!std::getline(in, line) || line != "ply") throw FormatError(where + ": missing 'ply' magic");
  PlyHeader h;
  bool in_vertex = false;
  bool seen_vertex = false;
  bool format_ok = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "end_header") {
      if (!format_ok) throw FormatError(where + ": only binary_little_endian 1.0 is supported");
      if (!seen_vertex) throw FormatError(where + ": no vertex element");
      return h;
    }
    if (word == "format") {
      std::string fmt, version;
      ls >> fmt >> version;
      format_ok = fmt == "binary_little_endian";
    } else if (word == "comment") {
      std::string key, value;
      ls >> key >> value;
      h.comments[key] = value;
    } else if (word == "element") {
      std::string name;
      std::size_t count = 0;
      if (!(ls >> name >> count)) throw FormatError(where + ": malformed element line");
      if (seen_vertex) throw FormatError(where + ": elements after 'vertex' are not supported");
      in_vertex = name == "vertex";
      if (!in_vertex) throw FormatError(where + ": unexpected element '" + name + "'");
      seen_vertex = true;
      h.vertex_count = count;
    } else if (word == "property") {
      std::string type, name;
      if (!(ls >> type >> name)) throw FormatError(where + ": malformed property line");
      if (type == "list") throw FormatError(where + ": list properties are not supported");
      if (!in_vertex) throw FormatError(where + ": property outside an element");
      h.properties.push_back({name, type, h.stride});
      h.stride += type_size(type);
    } else if (!word.empty() && word != "obj_info") {
      throw FormatError(where + ": unexpected header line '" + line + "'");
    }
  }
  throw FormatError(where + ": header is not terminated");
}

std::vector<char> read_body(std::istream& in, const PlyHeader& h, const std::string& where) {
  std::vector<char> body(h.vertex_count * h.stride);
  in.read(body.data(), static_cast<std::streamsize>(body.size()));
  if (static_cast<std::size_t>(in.gcount()) != body.size()) throw FormatError(where + ": truncated vertex data");
  return body;
}

const PlyProperty* find(const PlyHeader& h, const std::string& name) {
  for (const auto& p : h.properties) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

double read_scalar(const char* ptr, const std::string& type) {
  if (type == "float" || type == "float32") {
    float v;
    std::memcpy(&v, ptr, 4);
    return v;
  }
  if (type == "double" || type == "float64") {
    double v;
    std::memcpy(&v, ptr, 8);
    return v;
  }
  if (type == "uchar" || type == "uint8") return static_cast<unsigned char>(*ptr);
  throw SchemaError("unsupported PLY property type '" + type + "' for this field");
}

std::vector<std::string> gaussian_property_names() {
  std::vector<std::string> names = {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"};
  for (int i = 0; i < 45; ++i) names.push_back("f_rest_" + std::to_string(i));
  names.push_back("opacity");
  for (int i = 0; i < 3; ++i) names.push_back("scale_" + std::to_string(i));
  for (int i = 0; i < 4; ++i) names.push_back("rot_" + std::to_string(i));
  return names;
}

// f_rest is channel-major: f_rest[c * 15 + (k - 1)] holds band coefficient k of channel c.
int rest_to_sh_index(int rest) {
  const int c = rest / (kShCoeffs - 1);
  const int k = rest % (kShCoeffs - 1) + 1;
  return 3 * k + c;
}

}  // namespace

void save_ply(const GaussianCloud& cloud, const std::filesystem::path& path) {
  cloud.validate();
  const auto names = gaussian_property_names();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "ply\nformat binary_little_endian 1.0\ncomment sh_degree " << cloud.sh_degree << "\nelement vertex "
      << cloud.size() << "\n";
  for (const auto& n : names) out << "property float " << n << "\n";
  out << "end_header\n";

  std::vector<float> row(names.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    std::size_t k = 0;
    for (int c = 0; c < 3; ++c) row[k++] = cloud.positions[3 * i + c];
    for (int c = 0; c < 3; ++c) row[k++] = cloud.sh[i * kShFloats + c];
    for (int r = 0; r < 45; ++r) row[k++] = cloud.sh[i * kShFloats + rest_to_sh_index(r)];
    row[k++] = cloud.opacity_logits[i];
    for (int c = 0; c < 3; ++c) row[k++] = cloud.log_scales[3 * i + c];
    for (int c = 0; c < 4; ++c) row[k++] = cloud.rotations[4 * i + c];
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

GaussianCloud load_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string where = path.string();
  const PlyHeader h = read_header(in, where);

  const auto names = gaussian_property_names();
  std::vector<const PlyProperty*> props;
  for (const auto& n : names) {
    const PlyProperty* p = find(h, n);
    if (!p) throw SchemaError(where + ": missing property '" + n + "'");
    if (p->type != "float" && p->type != "float32") {
      throw SchemaError(where + ": property '" + n + "' must be float");
    }
    props.push_back(p);
  }
  const auto body = read_body(in, h, where);

  GaussianCloud cloud;
  cloud.sh_degree = kMaxShDegree;
  if (auto it = h.comments.find("sh_degree"); it != h.comments.end()) {
    try {
      cloud.sh_degree = std::stoi(it->second);
    } catch (const std::exception&) {
      throw FormatError(where + ": bad sh_degree comment");
    }
  }
  cloud.positions.resize(3 * h.vertex_count);
  cloud.rotations.resize(4 * h.vertex_count);
  cloud.log_scales.resize(3 * h.vertex_count);
  cloud.opacity_logits.resize(h.vertex_count);
  cloud.sh.assign(kShFloats * h.vertex_count, 0.0f);

  auto value = [&](std::size_t i, std::size_t prop) {
    float v;
    std::memcpy(&v, body.data() + i * h.stride + props[prop]->offset, 4);
    return v;
  };
  for (std::size_t i = 0; i < h.vertex_count; ++i) {
    std::size_t k = 0;
    for (int c = 0; c < 3; ++c) cloud.positions[3 * i + c] = value(i, k++);
    for (int c = 0; c < 3; ++c) cloud.sh[i * kShFloats + c] = value(i, k++);
    for (int r = 0; r < 45; ++r) cloud.sh[i * kShFloats + rest_to_sh_index(r)] = value(i, k++);
    cloud.opacity_logits[i] = value(i, k++);
    for (int c = 0; c < 3; ++c) cloud.log_scales[3 * i + c] = value(i, k++);
    for (int c = 0; c < 4; ++c) cloud.rotations[4 * i + c] = value(i, k++);
  }
  cloud.validate();
  return cloud;
}

SparsePoints load_points_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string where = path.string();
  const PlyHeader h = read_header(in, where);
  const PlyProperty* px = find(h, "x");
  const PlyProperty* py = find(h, "y");
  const PlyProperty* pz = find(h, "z");
  if (!px || !py || !pz) throw SchemaError(where + ": points need x, y and z");
  const PlyProperty* pr = find(h, "red");
  const PlyProperty* pg = find(h, "green");
  const PlyProperty* pb = find(h, "blue");
  const bool has_color = pr && pg && pb;
  const auto body = read_body(in, h, where);

  SparsePoints out;
  for (std::size_t i = 0; i < h.vertex_count; ++i) {
    const char* row = body.data() + i * h.stride;
    out.points.emplace_back(static_cast<float>(read_scalar(row + px->offset, px->type)),
                            static_cast<float>(read_scalar(row + py->offset, py->type)),
                            static_cast<float>(read_scalar(row + pz->offset, pz->type)));
    if (has_color) {
      if (pr->type != "uchar" && pr->type != "uint8") throw SchemaError(where + ": colors must be uchar");
      out.colors.push_back({read_scalar(row + pr->offset, pr->type) / 255.0,
                            read_scalar(row + pg->offset, pg->type) / 255.0,
                            read_scalar(row + pb->offset, pb->type) / 255.0});
    }
  }
  return out;
}

}  // namespace avatarforge::gs
