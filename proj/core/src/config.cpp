#include "cadgd/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <type_traits>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace cadgd {
namespace {

// Calls v(section, key, field) for every configurable field.
template <typename C, typename V>
void visit(C& c, V&& v) {
  v("scene", "image_width", c.scene.image_width);
  v("scene", "image_height", c.scene.image_height);
  v("scene", "min_objects", c.scene.min_objects);
  v("scene", "max_objects", c.scene.max_objects);
  v("scene", "num_classes", c.scene.num_classes);
  v("scene", "num_attributes", c.scene.num_attributes);
  v("scene", "attributes_per_class", c.scene.attributes_per_class);
  v("scene", "extra_attribute_prob", c.scene.extra_attribute_prob);
  v("scene", "min_scale", c.scene.min_scale);
  v("scene", "max_scale", c.scene.max_scale);
  v("scene", "min_separation_cells", c.scene.min_separation_cells);
  v("scene", "max_expressions", c.scene.max_expressions);
  v("scene", "max_tokens", c.scene.max_tokens);
  v("scene", "noise", c.scene.noise);
  v("scene", "context_weight", c.scene.context_weight);
  v("scene", "kernel_size", c.scene.kernel_size);
  v("scene", "vocab_seed", c.scene.vocab_seed);
  v("scene", "placement_attempts", c.scene.placement_attempts);
  v("data", "train_scenes", c.data.train_scenes);
  v("data", "val_scenes", c.data.val_scenes);
  v("data", "seed", c.data.seed);
  v("model", "channels", c.model.channels);
  v("model", "queries", c.model.queries);
  v("model", "cade_depth", c.model.cade_depth);
  v("model", "text_row_softmax", c.model.text_row_softmax);
  v("model", "decoder_layers", c.model.decoder.layers);
  v("model", "heads", c.model.decoder.heads);
  v("model", "ffn_hidden", c.model.decoder.ffn_hidden);
  v("model", "locality", c.model.decoder.locality);
  v("loss", "lambda1", c.loss.lambda1);
  v("loss", "lambda2", c.loss.lambda2);
  v("loss", "alpha", c.loss.alpha);
  v("infer", "cls_threshold", c.infer.cls_threshold);
  v("infer", "token_threshold", c.infer.token_threshold);
  v("infer", "crop_trigger", c.infer.crop_trigger);
  v("infer", "tau", c.infer.tau);
  v("train", "epochs", c.train.epochs);
  v("train", "learning_rate", c.train.learning_rate);
  v("train", "decay_epoch", c.train.decay_epoch);
  v("train", "decay_factor", c.train.decay_factor);
  v("train", "weight_decay", c.train.weight_decay);
  v("train", "beta1", c.train.beta1);
  v("train", "beta2", c.train.beta2);
  v("train", "epsilon", c.train.epsilon);
  v("train", "seed", c.train.seed);
  v("ablation", "cadgen", c.model.ablation.cadgen);
  v("ablation", "spatial_attn", c.model.ablation.spatial_attn);
  v("ablation", "channel_attn", c.model.ablation.channel_attn);
  v("ablation", "text_init", c.model.ablation.text_init);
  v("ablation", "density_init", c.model.ablation.density_init);
  v("ablation", "density_guided_inference", c.model.ablation.density_guided);
}

template <typename T>
void parse_value(const std::string& text, T& out, const std::string& where) {
  auto bad = [&] { throw std::invalid_argument("config " + where + ": cannot parse '" + text + "'"); };
  if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1" || text == "on" || text == "yes") {
      out = true;
    } else if (text == "false" || text == "0" || text == "off" || text == "no") {
      out = false;
    } else {
      bad();
    }
  } else {
    if constexpr (std::is_unsigned_v<T>) {
      if (!text.empty() && text[0] == '-') bad();
    }
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, out);
    if (ec != std::errc() || ptr != end) bad();
  }
}

template <typename T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<T>) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  } else {
    return std::to_string(v);
  }
}

}  // namespace

void validate(const Config& c) {
  auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
  validate(c.scene);
  validate(c.model);
  if (c.model.channels != c.scene.channels) fail("model channels must equal the feature width");
  if (c.data.train_scenes < 0 || c.data.val_scenes < 0) fail("negative scene count");
  for (double w : {c.loss.lambda1, c.loss.lambda2, c.loss.alpha}) {
    if (!(w >= 0.0)) fail("loss weights must be >= 0");
  }
  for (double t : {c.infer.cls_threshold, c.infer.token_threshold}) {
    if (!(t > 0.0 && t < 1.0)) fail("thresholds must lie in (0, 1)");
  }
  if (!(c.infer.tau > 0.0)) fail("tau must be positive");
  if (c.infer.crop_trigger < 0.0) fail("crop_trigger must be >= 0");
  if (c.train.epochs < 0) fail("epochs must be >= 0");
  if (!(c.train.learning_rate > 0.0)) fail("learning_rate must be positive");
  if (c.train.decay_epoch < 0) fail("decay_epoch must be >= 0");
  if (c.train.weight_decay < 0.0) fail("weight_decay must be >= 0");
  if (!(c.train.beta1 >= 0.0 && c.train.beta1 < 1.0 && c.train.beta2 >= 0.0 && c.train.beta2 < 1.0)) {
    fail("betas must lie in [0, 1)");
  }
  if (!(c.train.epsilon > 0.0)) fail("epsilon must be positive");
  std::size_t cells = 0;
  for (auto [h, w] : pyramid_shapes(c.scene.image_width, c.scene.image_height)) cells += h * w;
  if (c.model.queries > cells) {
    fail("queries (" + std::to_string(c.model.queries) + ") exceed pyramid cells (" +
         std::to_string(cells) + ")");
  }
}

Config parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::invalid_argument(std::string("config syntax: ") + e.what());
  }
  Config c;
  std::map<std::string, std::map<std::string, bool>> known;
  visit(c, [&](const char* s, const char* k, auto&) { known[s][k] = true; });
  for (const auto& [section, body] : tree) {
    if (!known.count(section)) {
      throw std::invalid_argument("config: unknown section [" + section + "]");
    }
    if (body.empty() && !body.data().empty()) {
      throw std::invalid_argument("config: key '" + section + "' outside any section");
    }
    for (const auto& [key, value] : body) {
      if (!known[section].count(key)) {
        throw std::invalid_argument("config: unknown key '" + key + "' in [" + section + "]");
      }
    }
  }
  visit(c, [&](const char* s, const char* k, auto& field) {
    const auto v = tree.get_optional<std::string>(pt::ptree::path_type(std::string(s) + "/" + k, '/'));
    if (v) parse_value(*v, field, std::string(s) + "." + k);
  });
  c.scene.channels = c.model.channels;
  c.model.decoder.channels = c.model.channels;
  validate(c);
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_string(const Config& config) {
  std::ostringstream out;
  std::string current;
  Config copy = config;
  visit(copy, [&](const char* s, const char* k, auto& field) {
    if (current != s) {
      if (!current.empty()) out << '\n';
      out << '[' << s << "]\n";
      current = s;
    }
    out << k << " = " << format_value(field) << '\n';
  });
  return out.str();
}

}  // namespace cadgd
