#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hmexpr/errors.hpp"
#include "hmexpr/training.hpp"

namespace hmexpr {
namespace {

using nlohmann::json;

constexpr const char* kFormat = "hmexpr-checkpoint";
constexpr int kVersion = 1;

json nest(std::span<const double> data, const Shape& shape, std::size_t axis, std::size_t offset) {
  json arr = json::array();
  if (axis + 1 == shape.size()) {
    for (std::size_t i = 0; i < shape[axis]; ++i) arr.push_back(data[offset + i]);
    return arr;
  }
  std::size_t stride = 1;
  for (std::size_t a = axis + 1; a < shape.size(); ++a) stride *= shape[a];
  for (std::size_t i = 0; i < shape[axis]; ++i) arr.push_back(nest(data, shape, axis + 1, offset + i * stride));
  return arr;
}

void unnest(const json& node, const Shape& shape, std::size_t axis, std::vector<double>& out, const std::string& name) {
  if (!node.is_array() || node.size() != shape[axis])
    throw ParseError("checkpoint values for " + name + " do not match the manifest shape");
  for (const json& v : node) {
    if (axis + 1 == shape.size()) {
      if (!v.is_number()) throw ParseError("checkpoint value for " + name + " is not a number");
      out.push_back(v.get<double>());
    } else {
      unnest(v, shape, axis + 1, out, name);
    }
  }
}

json params_manifest(const ParamSet& ps) {
  json m = json::array();
  for (std::size_t i = 0; i < ps.size(); ++i) m.push_back({{"name", ps.name(i)}, {"shape", ps.tensor(i).shape()}});
  return m;
}

json params_values(const ParamSet& ps) {
  json v = json::array();
  for (std::size_t i = 0; i < ps.size(); ++i) v.push_back(nest(ps.tensor(i).data(), ps.tensor(i).shape(), 0, 0));
  return v;
}

// Fills `skeleton` (built from the header spec) from the document, checking
// that names and shapes agree exactly with the manifest.
void read_params(const json& doc, ParamSet& skeleton) {
  const json& manifest = doc.at("manifest");
  const json& values = doc.at("values");
  if (!manifest.is_array() || !values.is_array() || manifest.size() != skeleton.size() ||
      values.size() != skeleton.size())
    throw ParseError("checkpoint manifest does not match the model layout");
  for (std::size_t i = 0; i < skeleton.size(); ++i) {
    const std::string name = manifest[i].at("name").get<std::string>();
    const Shape shape = manifest[i].at("shape").get<Shape>();
    if (name != skeleton.name(i) || shape != skeleton.tensor(i).shape())
      throw ParseError("checkpoint manifest entry " + std::to_string(i) + " (" + name + ") does not match layout");
    std::vector<double> flat;
    flat.reserve(shape_size(shape));
    unnest(values[i], shape, 0, flat, name);
    skeleton.tensor(i) = Tensor(shape, std::move(flat));
  }
}

json arch_json(const ArchSpec& a) {
  return {{"kind", arch_name(a.kind)},
          {"conv_filters", a.conv_filters},
          {"kernel_width", a.kernel_width},
          {"pool_width", a.pool_width},
          {"pool_stride", a.pool_stride},
          {"hidden", a.hidden},
          {"dropout", a.dropout},
          {"strided_kernel", a.strided_kernel},
          {"strided_stride", a.strided_stride}};
}

ArchSpec arch_from(const json& j) {
  ArchSpec a;
  a.kind = parse_arch(j.at("kind").get<std::string>());
  a.conv_filters = j.at("conv_filters").get<std::size_t>();
  a.kernel_width = j.at("kernel_width").get<std::size_t>();
  a.pool_width = j.at("pool_width").get<std::size_t>();
  a.pool_stride = j.at("pool_stride").get<std::size_t>();
  a.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  a.dropout = j.at("dropout").get<double>();
  a.strided_kernel = j.at("strided_kernel").get<std::size_t>();
  a.strided_stride = j.at("strided_stride").get<std::size_t>();
  return a;
}

json gan_spec_json(const GanSpec& s) {
  return {{"latent_dim", s.latent_dim},
          {"generator_hidden", s.generator_hidden},
          {"discriminator_hidden", s.discriminator_hidden}};
}

GanSpec gan_spec_from(const json& j) {
  GanSpec s;
  s.latent_dim = j.at("latent_dim").get<std::size_t>();
  s.generator_hidden = j.at("generator_hidden").get<std::vector<std::size_t>>();
  s.discriminator_hidden = j.at("discriminator_hidden").get<std::vector<std::size_t>>();
  return s;
}

json parse_doc(const std::string& text, std::string_view kind) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != kFormat) throw ParseError("not a checkpoint document");
  if (doc.value("version", 0) != kVersion) throw ParseError("unsupported checkpoint version");
  if (doc.value("kind", "") != kind) throw ParseError("checkpoint holds a " + doc.value("kind", std::string("?")) +
                                                      ", expected " + std::string(kind));
  return doc;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

std::string checkpoint_json(const Classifier& model) {
  json doc = {{"format", kFormat},
              {"version", kVersion},
              {"kind", "classifier"},
              {"arch", arch_json(model.arch)},
              {"seed", model.seed},
              {"manifest", params_manifest(model.params)},
              {"values", params_values(model.params)}};
  return doc.dump() + "\n";
}

std::string checkpoint_json(const Gan& gan) {
  const ParamSet all = gan.generator.merged(gan.discriminator);
  json doc = {{"format", kFormat},
              {"version", kVersion},
              {"kind", "gan"},
              {"gan", gan_spec_json(gan.spec)},
              {"seed", gan.seed},
              {"manifest", params_manifest(all)},
              {"values", params_values(all)}};
  return doc.dump() + "\n";
}

void save_checkpoint(const Classifier& model, const std::filesystem::path& path) {
  write_file_atomic(path, checkpoint_json(model));
}

void save_checkpoint(const Gan& gan, const std::filesystem::path& path) { write_file_atomic(path, checkpoint_json(gan)); }

Classifier classifier_from_json(const std::string& text) {
  const json doc = parse_doc(text, "classifier");
  try {
    Classifier c = build_classifier(arch_from(doc.at("arch")), doc.at("seed").get<std::uint64_t>(), InitMode::Zeros);
    read_params(doc, c.params);
    return c;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  }
}

Gan gan_from_json(const std::string& text) {
  const json doc = parse_doc(text, "gan");
  try {
    Gan g = build_gan(gan_spec_from(doc.at("gan")), doc.at("seed").get<std::uint64_t>());
    ParamSet all = g.generator.merged(g.discriminator);
    read_params(doc, all);
    g.generator = all.with_prefix("gen.");
    g.discriminator = all.with_prefix("disc.");
    return g;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  }
}

Classifier load_classifier(const std::filesystem::path& path) { return classifier_from_json(read_text(path)); }
Gan load_gan(const std::filesystem::path& path) { return gan_from_json(read_text(path)); }

}  // namespace hmexpr
