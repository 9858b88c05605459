#include "cadgd/evaluate.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include "cadgd/model.hpp"

namespace cadgd {
namespace {

struct Raw {
  std::vector<std::size_t> threshold, density;
  Tensor points;  // all K, pixels
  double density_sum = 0.0;
};

Raw run(const Config& config, const ParamStore& store, const Vocab& vocab, const Scene& scene,
        const Expression& expr) {
  const FeaturePyramid pyramid = render_features(scene, vocab, config.scene, scene.seed);
  const PairPrediction p = predict_pair(config.model, store, pyramid, embed_expression(expr, vocab));
  Raw r;
  r.threshold = threshold_select(p.prediction, config.infer.cls_threshold, config.infer.token_threshold);
  if (!p.density.empty()) {
    r.density_sum = p.density.sum();
    r.density = density_guided_select(p.prediction, p.density);
  }
  r.points = p.prediction.points;
  for (std::size_t k = 0; k < r.points.dim(0); ++k) {
    r.points.at(k, 0) *= scene.width;
    r.points.at(k, 1) *= scene.height;
  }
  return r;
}

void append(std::vector<double>& xy, const Tensor& points, const std::vector<std::size_t>& rows,
            double ox, double oy) {
  for (std::size_t k : rows) {
    xy.push_back(points.at(k, 0) + ox);
    xy.push_back(points.at(k, 1) + oy);
  }
}

Tensor to_points(const std::vector<double>& xy) { return Tensor({xy.size() / 2, 2}, xy); }

StrategySummary summarize(const std::vector<PairEval>& pairs, bool density) {
  std::vector<std::pair<double, double>> counts;
  double tp = 0, np = 0, ng = 0;
  for (const PairEval& e : pairs) {
    const StrategyOutcome& o = density ? *e.density : e.threshold;
    counts.emplace_back(static_cast<double>(o.count), static_cast<double>(e.gt_count));
    tp += static_cast<double>(o.localization.true_positives);
    np += static_cast<double>(o.count);
    ng += static_cast<double>(e.gt_count);
  }
  StrategySummary s;
  s.counts = count_metrics(counts);
  s.precision = np == 0 ? (ng == 0 ? 1.0 : 0.0) : tp / np;
  s.recall = ng == 0 ? 1.0 : tp / ng;
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

void check_summary(const StrategySummary& s, const char* name, std::vector<std::string>& v) {
  // One part in 1e12 of slack absorbs rounding when every error is equal.
  if (s.counts.mae > s.counts.rmse * (1.0 + 1e-12)) v.push_back(std::string(name) + ": MAE > RMSE");
  for (double x : {s.precision, s.recall, s.f1}) {
    if (!(x >= 0.0 && x <= 1.0)) v.push_back(std::string(name) + ": P/R/F1 outside [0,1]");
  }
}

}  // namespace

PairPrediction predict_pair(const ModelConfig& config, const ParamStore& store,
                            const FeaturePyramid& pyramid, const TextFeatures& text) {
  Graph g;
  const ForwardResult f = forward(g, store, config, pyramid, text);
  PairPrediction p;
  p.prediction = {f.points.value(), f.logits.value(), text.roles};
  if (f.density.valid()) p.density = f.density.value();
  p.selection = f.selection;
  p.text_queries = f.text_queries.value();
  p.queries = f.queries.value();
  return p;
}

const char* strategy_name(Strategy s) { return s == Strategy::threshold ? "threshold" : "density"; }

Strategy parse_strategy(const std::string& text) {
  if (text == "threshold") return Strategy::threshold;
  if (text == "density") return Strategy::density;
  throw std::invalid_argument("strategy must be 'threshold' or 'density', got '" + text + "'");
}

EvalReport evaluate(const Config& config, const ParamStore& store, const Vocab& vocab,
                    const std::vector<Scene>& scenes) {
  validate(config);
  const bool has_density = config.model.ablation.cadgen;
  EvalReport report;
  for (const Scene& scene : scenes) {
    for (std::size_t e = 0; e < scene.expressions.size(); ++e) {
      const Expression& expr = scene.expressions[e];
      PairEval pe;
      pe.scene_id = scene.id;
      pe.expression = e;
      const auto refs = referred_objects(scene, expr);
      pe.gt_count = refs.size();
      Tensor truth({refs.size(), 2});
      for (std::size_t i = 0; i < refs.size(); ++i) {
        truth.at(i, 0) = scene.objects[refs[i]].x;
        truth.at(i, 1) = scene.objects[refs[i]].y;
      }

      const Raw whole = run(config, store, vocab, scene, expr);
      pe.density_sum = whole.density_sum;
      std::vector<double> txy, dxy;
      append(txy, whole.points, whole.threshold, 0, 0);
      append(dxy, whole.points, whole.density, 0, 0);
      const bool crop_t = static_cast<double>(whole.threshold.size()) > config.infer.crop_trigger;
      const bool crop_d = has_density && static_cast<double>(whole.density.size()) > config.infer.crop_trigger;
      if (crop_t || crop_d) {
        pe.cropped = true;
        if (crop_t) txy.clear();
        if (crop_d) dxy.clear();
        for (int q = 0; q < 4; ++q) {
          const Scene part = quadrant_scene(scene, q);
          const Raw r = run(config, store, vocab, part, expr);
          const double ox = (q % 2) * part.width, oy = (q / 2) * part.height;
          if (crop_t) append(txy, r.points, r.threshold, ox, oy);
          if (crop_d) append(dxy, r.points, r.density, ox, oy);
        }
      }

      pe.threshold.points = to_points(txy);
      pe.threshold.count = txy.size() / 2;
      pe.threshold.localization = localization_metrics(pe.threshold.points, truth, config.infer.tau);
      if (has_density) {
        StrategyOutcome d;
        d.points = to_points(dxy);
        d.count = dxy.size() / 2;
        d.localization = localization_metrics(d.points, truth, config.infer.tau);
        if (!pe.cropped && d.count != guided_count(whole.density_sum, config.model.queries)) {
          report.violations.push_back("scene " + std::to_string(scene.id) +
                                      ": density-guided count differs from rounded density sum");
        }
        pe.density = std::move(d);
      }
      report.pairs.push_back(std::move(pe));
    }
  }
  if (report.pairs.empty()) throw std::invalid_argument("evaluation set has no (scene, expression) pairs");
  report.threshold = summarize(report.pairs, false);
  check_summary(report.threshold, "threshold", report.violations);
  if (has_density) {
    report.density = summarize(report.pairs, true);
    check_summary(*report.density, "density", report.violations);
  }
  return report;
}

void write_report(std::ostream& out, const EvalReport& report, std::optional<Strategy> only) {
  char buf[512];
  out << "#pair\tscene\texpression\tgt\tcount_threshold\tcount_density\tdensity_sum\t"
         "precision\trecall\tf1\n";
  for (const PairEval& e : report.pairs) {
    const LocalizationMetrics& l = e.threshold.localization;
    std::snprintf(buf, sizeof buf, "pair\t%d\t%zu\t%zu\t%zu\t%s\t%.6f\t%.6f\t%.6f\t%.6f\n", e.scene_id,
                  e.expression, e.gt_count, e.threshold.count,
                  e.density ? std::to_string(e.density->count).c_str() : "-", e.density_sum,
                  l.precision, l.recall, l.f1);
    out << buf;
  }
  auto line = [&](const char* name, const StrategySummary& s) {
    std::snprintf(buf, sizeof buf, "summary\t%s\tpairs=%zu\tmae=%.6f\trmse=%.6f\tprecision=%.6f\trecall=%.6f\tf1=%.6f\n",
                  name, report.pairs.size(), s.counts.mae, s.counts.rmse, s.precision, s.recall, s.f1);
    out << buf;
  };
  if (only != Strategy::density) line("threshold", report.threshold);
  if (report.density && only != Strategy::threshold) line("density", *report.density);
  for (const std::string& v : report.violations) out << "violation\t" << v << '\n';
}

}  // namespace cadgd
