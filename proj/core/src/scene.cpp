#include "cadgd/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "cadgd/random.hpp"

namespace cadgd {
namespace {

constexpr std::uint64_t kObjectStream = 0x0b1ec7;
constexpr std::uint64_t kExpressionStream = 0xe59;
constexpr std::uint64_t kNoiseStream = 0x401e;

void normalize(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n == 0.0) throw std::runtime_error("degenerate vocabulary embedding");
  for (double& x : v) x /= n;
}

}  // namespace

void validate(const SceneConfig& c) {
  auto fail = [](const std::string& m) { throw std::invalid_argument("scene config: " + m); };
  if (c.image_width <= 0 || c.image_height <= 0 || c.image_width % 32 != 0 ||
      c.image_height % 32 != 0) {
    fail("image size must be a positive multiple of 32");
  }
  if (c.min_objects < 0 || c.max_objects < c.min_objects) fail("bad object count range");
  if (c.num_classes < 1 || c.num_attributes < 2) fail("need >=1 class and >=2 attributes");
  if (c.attributes_per_class < 2 || c.attributes_per_class > c.num_attributes) {
    fail("attributes_per_class must lie in [2, num_attributes]");
  }
  if (c.extra_attribute_prob < 0.0 || c.extra_attribute_prob > 1.0) fail("bad extra_attribute_prob");
  if (c.min_scale <= 0.0 || c.max_scale < c.min_scale) fail("bad scale range");
  if (c.min_separation_cells < 0.0) fail("negative separation");
  if (c.max_expressions < 1) fail("max_expressions must be >= 1");
  if (c.max_tokens < 3) fail("max_tokens must be >= 3");
  if (c.channels < 1) fail("channels must be >= 1");
  if (c.noise < 0.0) fail("negative noise");
  if (c.kernel_size < 1 || c.kernel_size % 2 == 0) fail("kernel_size must be odd");
  if (c.placement_attempts < 1) fail("placement_attempts must be >= 1");
}

const char* role_name(TokenRole role) {
  switch (role) {
    case TokenRole::cls: return "cls";
    case TokenRole::object_class: return "class";
    case TokenRole::attribute: return "attribute";
    case TokenRole::pad: return "pad";
  }
  return "?";
}

std::size_t Vocab::token_count() const {
  return 1 + static_cast<std::size_t>(num_classes) + static_cast<std::size_t>(num_attributes);
}

std::size_t Vocab::class_token(int class_id) const {
  if (class_id < 0 || class_id >= num_classes) throw std::out_of_range("unknown class id");
  return 1 + static_cast<std::size_t>(class_id);
}

std::size_t Vocab::attribute_token(int attribute_id) const {
  if (attribute_id < 0 || attribute_id >= num_attributes) {
    throw std::out_of_range("unknown attribute id");
  }
  return 1 + static_cast<std::size_t>(num_classes) + static_cast<std::size_t>(attribute_id);
}

std::vector<double> Vocab::row(std::size_t id) const {
  const std::size_t c = channels();
  if (id >= embeddings.dim(0)) throw std::out_of_range("unknown vocab id " + std::to_string(id));
  return {embeddings.values().begin() + static_cast<std::ptrdiff_t>(id * c),
          embeddings.values().begin() + static_cast<std::ptrdiff_t>((id + 1) * c)};
}

std::vector<std::vector<int>> attribute_registry(const SceneConfig& config) {
  std::vector<std::vector<int>> reg(static_cast<std::size_t>(config.num_classes));
  for (int c = 0; c < config.num_classes; ++c) {
    for (int j = 0; j < config.attributes_per_class; ++j) {
      reg[static_cast<std::size_t>(c)].push_back((c + j) % config.num_attributes);
    }
    std::sort(reg[static_cast<std::size_t>(c)].begin(), reg[static_cast<std::size_t>(c)].end());
  }
  return reg;
}

Vocab make_vocab(const SceneConfig& config) {
  validate(config);
  Vocab v;
  v.num_classes = config.num_classes;
  v.num_attributes = config.num_attributes;
  v.registry = attribute_registry(config);
  const std::size_t rows = v.token_count() + 2, c = config.channels;
  Rng rng(Rng::derive(config.vocab_seed, 0x70c));
  std::vector<std::vector<double>> basis;
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> e(c);
    for (double& x : e) x = rng.normal();
    // Orthogonalize while there is room, so tokens are exactly separable.
    if (r < c) {
      for (const auto& b : basis) {
        double dot = 0.0;
        for (std::size_t i = 0; i < c; ++i) dot += e[i] * b[i];
        for (std::size_t i = 0; i < c; ++i) e[i] -= dot * b[i];
      }
    }
    normalize(e);
    basis.push_back(e);
  }
  v.embeddings = Tensor({rows, c});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(basis[r].begin(), basis[r].end(), v.embeddings.data().begin() + static_cast<std::ptrdiff_t>(r * c));
  }
  return v;
}

Expression make_expression(int class_id, std::vector<int> attributes, const Vocab& vocab,
                           std::size_t max_tokens) {
  std::sort(attributes.begin(), attributes.end());
  attributes.erase(std::unique(attributes.begin(), attributes.end()), attributes.end());
  if (attributes.size() + 2 > max_tokens) {
    throw std::invalid_argument("expression longer than max_tokens");
  }
  Expression e;
  e.class_id = class_id;
  e.attributes = attributes;
  e.tokens.push_back({TokenRole::cls, vocab.cls_token()});
  for (int a : attributes) e.tokens.push_back({TokenRole::attribute, vocab.attribute_token(a)});
  e.tokens.push_back({TokenRole::object_class, vocab.class_token(class_id)});
  while (e.tokens.size() < max_tokens) e.tokens.push_back({TokenRole::pad, 0});
  return e;
}

bool refers_to(const Expression& expr, const SceneObject& object) {
  if (expr.class_id != object.class_id) return false;
  return std::includes(object.attributes.begin(), object.attributes.end(),
                       expr.attributes.begin(), expr.attributes.end());
}

std::vector<std::size_t> referred_objects(const Scene& scene, const Expression& expr) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    if (refers_to(expr, scene.objects[i])) out.push_back(i);
  }
  return out;
}

Scene generate_scene(const SceneConfig& config, const Vocab& vocab, std::uint64_t seed, int id) {
  validate(config);
  Scene s;
  s.id = id;
  s.seed = seed;
  s.width = config.image_width;
  s.height = config.image_height;

  Rng rng(Rng::derive(seed, kObjectStream));
  const auto n = rng.integer(config.min_objects, config.max_objects);
  const double min_sep = config.min_separation_cells * kFinestStride;
  for (std::int64_t i = 0; i < n; ++i) {
    SceneObject o;
    bool placed = false;
    for (int attempt = 0; attempt < config.placement_attempts && !placed; ++attempt) {
      o.x = rng.uniform(0.0, s.width);
      o.y = rng.uniform(0.0, s.height);
      placed = std::all_of(s.objects.begin(), s.objects.end(), [&](const SceneObject& p) {
        return std::hypot(p.x - o.x, p.y - o.y) >= min_sep;
      });
    }
    if (!placed) {
      throw std::runtime_error("could not place object " + std::to_string(i) + " of " +
                               std::to_string(n) + " with separation " + std::to_string(min_sep));
    }
    o.class_id = static_cast<int>(rng.integer(0, config.num_classes - 1));
    const auto& reg = vocab.registry.at(static_cast<std::size_t>(o.class_id));
    const auto primary = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(reg.size()) - 1));
    for (std::size_t j = 0; j < reg.size(); ++j) {
      if (j == primary || rng.bernoulli(config.extra_attribute_prob)) o.attributes.push_back(reg[j]);
    }
    o.scale = rng.uniform(config.min_scale, config.max_scale);
    s.objects.push_back(std::move(o));
  }

  // Every (present class, registered attribute) pair is a candidate.
  Rng erng(Rng::derive(seed, kExpressionStream));
  std::vector<std::pair<int, int>> candidates;
  for (int c = 0; c < config.num_classes; ++c) {
    const bool present = std::any_of(s.objects.begin(), s.objects.end(),
                                     [c](const SceneObject& o) { return o.class_id == c; });
    if (!present) continue;
    for (int a : vocab.registry[static_cast<std::size_t>(c)]) candidates.emplace_back(c, a);
  }
  if (candidates.empty()) {
    const int c = static_cast<int>(erng.integer(0, config.num_classes - 1));
    const auto& reg = vocab.registry[static_cast<std::size_t>(c)];
    candidates.emplace_back(c, reg[static_cast<std::size_t>(erng.integer(0, static_cast<std::int64_t>(reg.size()) - 1))]);
  }
  for (std::size_t i = candidates.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(erng.integer(0, static_cast<std::int64_t>(i) - 1));
    std::swap(candidates[i - 1], candidates[j]);
  }
  candidates.resize(std::min(candidates.size(), static_cast<std::size_t>(config.max_expressions)));
  std::sort(candidates.begin(), candidates.end());
  for (auto [c, a] : candidates) {
    s.expressions.push_back(make_expression(c, {a}, vocab, config.max_tokens));
  }
  return s;
}

std::vector<bool> TextFeatures::non_pad() const {
  std::vector<bool> keep(roles.size());
  for (std::size_t i = 0; i < roles.size(); ++i) keep[i] = roles[i] != TokenRole::pad;
  return keep;
}

std::size_t TextFeatures::non_pad_count() const {
  return static_cast<std::size_t>(
      std::count_if(roles.begin(), roles.end(), [](TokenRole r) { return r != TokenRole::pad; }));
}

TextFeatures embed_expression(const Expression& expr, const Vocab& vocab) {
  const std::size_t n = expr.tokens.size(), c = vocab.channels();
  TextFeatures t;
  t.features = Tensor({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    const Token& tok = expr.tokens[i];
    t.roles.push_back(tok.role);
    if (tok.role == TokenRole::pad) continue;
    if (tok.vocab_id >= vocab.token_count()) {
      throw std::out_of_range("unknown vocab id " + std::to_string(tok.vocab_id));
    }
    const auto r = vocab.row(tok.vocab_id);
    std::copy(r.begin(), r.end(), t.features.data().begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  return t;
}

Tensor expression_embedding(const Expression& expr, const Vocab& vocab) {
  Tensor e({vocab.channels()});
  double n = 0.0;
  for (const Token& tok : expr.tokens) {
    if (tok.role == TokenRole::pad || tok.role == TokenRole::cls) continue;
    const auto r = vocab.row(tok.vocab_id);
    for (std::size_t i = 0; i < r.size(); ++i) e[i] += r[i];
    n += 1.0;
  }
  if (n > 0.0) e *= 1.0 / n;
  return e;
}

std::size_t FeaturePyramid::cell_count() const {
  std::size_t n = 0;
  for (const auto& l : levels) n += l.dim(0) * l.dim(1);
  return n;
}

std::vector<std::pair<std::size_t, std::size_t>> pyramid_shapes(int width, int height) {
  if (width <= 0 || height <= 0 || width % 32 != 0 || height % 32 != 0) {
    throw std::invalid_argument("image size " + std::to_string(width) + "x" +
                                std::to_string(height) + " not divisible by 32");
  }
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  for (std::size_t l = 0; l < kPyramidLevels; ++l) {
    const int stride = kFinestStride << l;
    shapes.emplace_back(static_cast<std::size_t>(height / stride),
                        static_cast<std::size_t>(width / stride));
  }
  return shapes;
}

FeaturePyramid render_features(const Scene& scene, const Vocab& vocab, const SceneConfig& config,
                               std::uint64_t seed) {
  const auto shapes = pyramid_shapes(scene.width, scene.height);
  const std::size_t c = vocab.channels();

  std::vector<std::vector<double>> signatures;
  for (const SceneObject& o : scene.objects) {
    std::vector<double> sig = vocab.row(vocab.class_token(o.class_id));
    for (int a : o.attributes) {
      const auto r = vocab.row(vocab.attribute_token(a));
      for (std::size_t i = 0; i < c; ++i) sig[i] += r[i];
    }
    const auto cx = vocab.row(vocab.context_row(0)), cy = vocab.row(vocab.context_row(1));
    const double u = o.x / scene.width - 0.5, v = o.y / scene.height - 0.5;
    for (std::size_t i = 0; i < c; ++i) sig[i] += config.context_weight * (u * cx[i] + v * cy[i]);
    signatures.push_back(std::move(sig));
  }

  Rng rng(Rng::derive(seed, kNoiseStream));
  FeaturePyramid p;
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto [h, w] = shapes[l];
    const double stride = static_cast<double>(kFinestStride << l);
    Tensor level({h, w, c});
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const double px = (static_cast<double>(j) + 0.5) * stride;
        const double py = (static_cast<double>(i) + 0.5) * stride;
        double* cell = &level.at(i, j, 0);
        for (std::size_t k = 0; k < scene.objects.size(); ++k) {
          const SceneObject& o = scene.objects[k];
          const double r = std::max(o.scale, 0.5 * stride);
          const double d2 = (px - o.x) * (px - o.x) + (py - o.y) * (py - o.y);
          const double wgt = std::exp(-d2 / (2.0 * r * r));
          for (std::size_t ch = 0; ch < c; ++ch) cell[ch] += wgt * signatures[k][ch];
        }
        if (config.noise > 0.0) {
          for (std::size_t ch = 0; ch < c; ++ch) cell[ch] += config.noise * rng.normal();
        }
      }
    }
    p.levels.push_back(std::move(level));
  }
  return p;
}

Tensor gt_density_map(const Scene& scene, const Expression& expr, std::size_t rows,
                      std::size_t cols, int kernel_size) {
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw std::invalid_argument("density kernel size must be odd, got " + std::to_string(kernel_size));
  }
  const auto H = static_cast<std::size_t>(scene.height), W = static_cast<std::size_t>(scene.width);
  if (rows == 0 || cols == 0 || H % rows != 0 || W % cols != 0) {
    throw std::invalid_argument("density map shape does not tile the image");
  }
  const std::size_t fy = H / rows, fx = W / cols;
  const int half = kernel_size / 2;
  const double sigma = kernel_size / 4.0;
  Tensor out({rows, cols, 1});
  std::vector<double> patch;
  for (std::size_t idx : referred_objects(scene, expr)) {
    const SceneObject& o = scene.objects[idx];
    const int cx = std::clamp(static_cast<int>(std::floor(o.x)), 0, scene.width - 1);
    const int cy = std::clamp(static_cast<int>(std::floor(o.y)), 0, scene.height - 1);
    patch.assign(static_cast<std::size_t>(kernel_size * kernel_size), 0.0);
    double total = 0.0;
    for (int dy = -half; dy <= half; ++dy) {
      for (int dx = -half; dx <= half; ++dx) {
        const int px = cx + dx, py = cy + dy;
        if (px < 0 || py < 0 || px >= scene.width || py >= scene.height) continue;
        const double ex = px + 0.5 - o.x, ey = py + 0.5 - o.y;
        const double v = std::exp(-(ex * ex + ey * ey) / (2.0 * sigma * sigma));
        patch[static_cast<std::size_t>((dy + half) * kernel_size + dx + half)] = v;
        total += v;
      }
    }
    for (int dy = -half; dy <= half; ++dy) {
      for (int dx = -half; dx <= half; ++dx) {
        const double v = patch[static_cast<std::size_t>((dy + half) * kernel_size + dx + half)];
        if (v == 0.0) continue;
        const auto px = static_cast<std::size_t>(cx + dx), py = static_cast<std::size_t>(cy + dy);
        out[(py / fy) * cols + px / fx] += v / total;
      }
    }
  }
  return out;
}

Scene quadrant_scene(const Scene& scene, int quadrant) {
  if (quadrant < 0 || quadrant > 3) throw std::out_of_range("quadrant must be 0..3");
  if (scene.width % 64 != 0 || scene.height % 64 != 0) {
    throw std::invalid_argument("cropping needs image sides divisible by 64");
  }
  Scene q;
  q.id = scene.id;
  q.seed = Rng::derive(scene.seed, 0xc409 + static_cast<std::uint64_t>(quadrant));
  q.width = scene.width / 2;
  q.height = scene.height / 2;
  q.expressions = scene.expressions;
  const double ox = (quadrant % 2) * q.width, oy = (quadrant / 2) * q.height;
  for (const SceneObject& o : scene.objects) {
    if (o.x < ox || o.x >= ox + q.width || o.y < oy || o.y >= oy + q.height) continue;
    SceneObject shifted = o;
    shifted.x -= ox;
    shifted.y -= oy;
    q.objects.push_back(shifted);
  }
  return q;
}

std::string scene_to_json_line(const Scene& scene) {
  nlohmann::json j;
  j["id"] = scene.id;
  j["seed"] = scene.seed;
  j["width"] = scene.width;
  j["height"] = scene.height;
  j["objects"] = nlohmann::json::array();
  for (const SceneObject& o : scene.objects) {
    j["objects"].push_back({{"x", o.x}, {"y", o.y}, {"class", o.class_id},
                            {"attributes", o.attributes}, {"scale", o.scale}});
  }
  j["expressions"] = nlohmann::json::array();
  for (const Expression& e : scene.expressions) {
    j["expressions"].push_back({{"class", e.class_id}, {"attributes", e.attributes}});
  }
  return j.dump();
}

Scene scene_from_json_line(const std::string& line, const Vocab& vocab, std::size_t max_tokens) {
  const auto j = nlohmann::json::parse(line);
  Scene s;
  s.id = j.at("id").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.width = j.at("width").get<int>();
  s.height = j.at("height").get<int>();
  for (const auto& jo : j.at("objects")) {
    SceneObject o;
    o.x = jo.at("x").get<double>();
    o.y = jo.at("y").get<double>();
    o.class_id = jo.at("class").get<int>();
    o.attributes = jo.at("attributes").get<std::vector<int>>();
    o.scale = jo.at("scale").get<double>();
    if (o.x < 0 || o.y < 0 || o.x >= s.width || o.y >= s.height) {
      throw std::invalid_argument("object center outside image in scene " + std::to_string(s.id));
    }
    if (o.attributes.empty()) {
      throw std::invalid_argument("object without attributes in scene " + std::to_string(s.id));
    }
    vocab.class_token(o.class_id);
    for (int a : o.attributes) vocab.attribute_token(a);
    s.objects.push_back(std::move(o));
  }
  for (const auto& je : j.at("expressions")) {
    s.expressions.push_back(make_expression(je.at("class").get<int>(),
                                            je.at("attributes").get<std::vector<int>>(), vocab,
                                            max_tokens));
  }
  return s;
}

void write_scenes(const std::filesystem::path& path, const std::vector<Scene>& scenes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const Scene& s : scenes) out << scene_to_json_line(s) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<Scene> read_scenes(const std::filesystem::path& path, const Vocab& vocab,
                               std::size_t max_tokens) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<Scene> scenes;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    scenes.push_back(scene_from_json_line(line, vocab, max_tokens));
  }
  return scenes;
}

void write_pgm(const std::filesystem::path& path, const Tensor& map) {
  if (map.rank() < 2 || (map.rank() == 3 && map.dim(2) != 1) || map.rank() > 3) {
    throw std::invalid_argument("graymap export needs a [h,w] or [h,w,1] map");
  }
  const std::size_t h = map.dim(0), w = map.dim(1);
  double mx = 0.0;
  for (double v : map.data()) mx = std::max(mx, v);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << w << ' ' << h << "\n255\n";
  for (double v : map.data()) {
    const double s = mx > 0.0 ? std::clamp(v / mx, 0.0, 1.0) * 255.0 : 0.0;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(s))));
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace cadgd
