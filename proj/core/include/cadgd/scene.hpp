#pragma once

// Synthetic scenes: attributed objects, referring expressions over them, the
// cross-modal feature pyramid they induce, and ground-truth density maps.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cadgd/tensor.hpp"

namespace cadgd {

inline constexpr std::size_t kPyramidLevels = 4;
inline constexpr int kFinestStride = 4;

struct SceneConfig {
  int image_width = 64;
  int image_height = 64;
  int min_objects = 3;
  int max_objects = 10;
  int num_classes = 2;
  int num_attributes = 3;
  int attributes_per_class = 3;
  double extra_attribute_prob = 0.3;
  double min_scale = 3.0;  // object radius in pixels
  double max_scale = 6.0;
  double min_separation_cells = 2.0;  // measured in finest-level cells
  int max_expressions = 4;
  std::size_t max_tokens = 4;
  std::size_t channels = 16;
  double noise = 0.05;
  double context_weight = 0.5;
  int kernel_size = 15;
  std::uint64_t vocab_seed = 7;
  int placement_attempts = 200;
};

// Throws std::invalid_argument when the configuration cannot produce scenes.
void validate(const SceneConfig& config);

enum class TokenRole { cls, object_class, attribute, pad };
const char* role_name(TokenRole role);

struct Token {
  TokenRole role = TokenRole::pad;
  std::size_t vocab_id = 0;
};

// Token table plus the class -> attribute registry. Row 0 is CLS, then one row
// per class, one per attribute, and finally two context directions that encode
// where in the image an object sits.
struct Vocab {
  int num_classes = 0;
  int num_attributes = 0;
  Tensor embeddings;  // [token_count + 2, C], unit rows
  std::vector<std::vector<int>> registry;

  std::size_t token_count() const;
  std::size_t channels() const { return embeddings.dim(1); }
  std::size_t cls_token() const { return 0; }
  std::size_t class_token(int class_id) const;
  std::size_t attribute_token(int attribute_id) const;
  std::size_t context_row(int axis) const { return token_count() + axis; }
  std::vector<double> row(std::size_t id) const;
};

// Class c is registered with attributes (c + j) mod num_attributes.
std::vector<std::vector<int>> attribute_registry(const SceneConfig& config);
Vocab make_vocab(const SceneConfig& config);

struct SceneObject {
  double x = 0.0;  // pixels
  double y = 0.0;
  int class_id = 0;
  std::vector<int> attributes;  // sorted, unique, non-empty
  double scale = 1.0;
};

struct Expression {
  int class_id = 0;
  std::vector<int> attributes;  // sorted, unique
  std::vector<Token> tokens;    // CLS, attributes, class, then padding
};

struct Scene {
  int id = 0;
  std::uint64_t seed = 0;
  int width = 0;
  int height = 0;
  std::vector<SceneObject> objects;
  std::vector<Expression> expressions;
};

Expression make_expression(int class_id, std::vector<int> attributes, const Vocab& vocab,
                           std::size_t max_tokens);

// An object is referred to when its class matches and it carries every
// attribute of the expression.
bool refers_to(const Expression& expr, const SceneObject& object);
std::vector<std::size_t> referred_objects(const Scene& scene, const Expression& expr);

Scene generate_scene(const SceneConfig& config, const Vocab& vocab, std::uint64_t seed,
                     int id = 0);

struct TextFeatures {
  Tensor features;  // [N, C], pad rows zero
  std::vector<TokenRole> roles;

  std::size_t size() const { return roles.size(); }
  std::vector<bool> non_pad() const;
  std::size_t non_pad_count() const;
};

TextFeatures embed_expression(const Expression& expr, const Vocab& vocab);

// Mean of the non-CLS token embeddings of an expression, [C].
Tensor expression_embedding(const Expression& expr, const Vocab& vocab);

struct FeaturePyramid {
  std::vector<Tensor> levels;  // [h_i, w_i, C], finest first

  std::size_t cell_count() const;
};

// Level extents for an image; throws unless both sides divide by 32.
std::vector<std::pair<std::size_t, std::size_t>> pyramid_shapes(int width, int height);

FeaturePyramid render_features(const Scene& scene, const Vocab& vocab,
                               const SceneConfig& config, std::uint64_t seed);

// [h, w, 1] map whose cells sum to the number of referred objects.
Tensor gt_density_map(const Scene& scene, const Expression& expr, std::size_t rows,
                      std::size_t cols, int kernel_size = 15);

// Objects whose center lies in quadrant q (0 top-left, 1 top-right,
// 2 bottom-left, 3 bottom-right), shifted into a half-size scene.
Scene quadrant_scene(const Scene& scene, int quadrant);

// One scene per line.
std::string scene_to_json_line(const Scene& scene);
Scene scene_from_json_line(const std::string& line, const Vocab& vocab,
                           std::size_t max_tokens);
void write_scenes(const std::filesystem::path& path, const std::vector<Scene>& scenes);
std::vector<Scene> read_scenes(const std::filesystem::path& path, const Vocab& vocab,
                               std::size_t max_tokens);

// Binary 8-bit graymap of a [h, w] or [h, w, 1] map scaled so the maximum is
// 255; an all-zero (or all-negative) map stays black.
void write_pgm(const std::filesystem::path& path, const Tensor& map);

}  // namespace cadgd
