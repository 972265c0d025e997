#pragma once

#include "eatformer/checkpoint.hpp"
#include "eatformer/dataset.hpp"
#include "eatformer/model.hpp"

namespace eatformer {

struct TrainConfig {
  std::int64_t epochs = 200;
  std::int64_t batch_size = 25;
  double lr = 5e-4;
  double weight_decay = 5e-2;
  std::uint64_t seed = 0;
  double stop_accuracy = 0.0;  // > 0 stops once training accuracy reaches it
};

struct EpochStats {
  std::int64_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

inline std::string metrics_to_csv(const std::vector<EpochStats>& stats) {
  std::ostringstream os;
  os << "epoch,loss,accuracy\n";
  os.precision(17);
  for (const auto& s : stats) os << s.epoch << "," << s.loss << "," << s.accuracy << "\n";
  return os.str();
}

/// Classifier fitting loop: shuffled fixed-size batches, decoupled-decay
/// adaptive updates, per-epoch mean loss and training accuracy from the
/// training-mode forward. Fully determined by cfg.seed.
inline std::vector<EpochStats> train_classifier(Model& model, const Dataset& data,
                                                const TrainConfig& cfg,
                                                std::vector<double>* best_snapshot = nullptr) {
  detail::check(data.size() >= 2, "training needs at least two samples");
  detail::check(cfg.batch_size >= 2, "batch size must be >= 2 for batch statistics");
  detail::check(cfg.batch_size <= data.size(),
                "batch size " + std::to_string(cfg.batch_size) + " exceeds the dataset (" +
                    std::to_string(data.size()) + " samples)");
  for (auto l : data.labels)
    detail::check(l < model.spec.num_classes, "label " + std::to_string(l) +
                                                  " out of range for " +
                                                  std::to_string(model.spec.num_classes) +
                                                  " classes");
  ParamList params = model.params();
  AdamW opt(AdamW::Opts{.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  Rng rng(cfg.seed);
  std::vector<std::int64_t> order(data.size());
  for (std::int64_t i = 0; i < data.size(); ++i) order[i] = i;
  std::vector<EpochStats> history;
  double best_acc = -1.0;
  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // Fisher-Yates shuffle driven by the funneled generator
    for (std::int64_t i = data.size() - 1; i > 0; --i) {
      const auto j = static_cast<std::int64_t>(rng.uniform_index(i + 1));
      std::swap(order[i], order[j]);
    }
    double loss_sum = 0.0;
    std::int64_t correct = 0, seen = 0;
    for (std::int64_t start = 0; start + cfg.batch_size <= data.size();
         start += cfg.batch_size) {
      std::vector<std::int64_t> idx(order.begin() + start,
                                    order.begin() + start + cfg.batch_size);
      Tensor images = data.batch_images(idx);
      const auto labels = data.batch_labels(idx);
      Tensor logits = model.forward(images, /*training=*/true);
      Tensor loss = cross_entropy(logits, labels);
      zero_grads(params);
      loss.backward();
      opt.step(params);
      loss_sum += loss.item() * static_cast<double>(idx.size());
      for (std::size_t b = 0; b < idx.size(); ++b) {
        const double* row = logits.data() + b * model.spec.num_classes;
        std::int64_t arg = 0;
        for (std::int64_t k = 1; k < model.spec.num_classes; ++k)
          if (row[k] > row[arg]) arg = k;
        correct += arg == labels[b] ? 1 : 0;
      }
      seen += static_cast<std::int64_t>(idx.size());
    }
    EpochStats s;
    s.epoch = epoch;
    s.loss = loss_sum / static_cast<double>(seen);
    s.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    history.push_back(s);
    if (best_snapshot && s.accuracy > best_acc) {
      best_acc = s.accuracy;
      best_snapshot->clear();
      for (const auto& p : params)
        best_snapshot->insert(best_snapshot->end(), p.tensor.values().begin(),
                              p.tensor.values().end());
    }
    if (cfg.stop_accuracy > 0.0 && s.accuracy >= cfg.stop_accuracy) break;
  }
  return history;
}

/// Writes `values` (a concatenated snapshot in params order) back into the model.
inline void restore_snapshot(Model& model, const std::vector<double>& values) {
  ParamList params = model.params();
  std::size_t off = 0;
  for (auto& p : params) {
    detail::check(off + p.tensor.values().size() <= values.size(),
                  "snapshot shorter than the parameter list");
    std::copy(values.begin() + off, values.begin() + off + p.tensor.values().size(),
              p.tensor.values().begin());
    off += p.tensor.values().size();
  }
  detail::check(off == values.size(), "snapshot longer than the parameter list");
}

}  // namespace eatformer
