#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "growbrain/dataset.hpp"
#include "growbrain/error.hpp"
#include "growbrain/network.hpp"

namespace growbrain {

/// Which pre-existing layers are fine-tuned alongside group "new".
enum class Scenario { NewOnly, FromTopMinus1, FromTopMinus2, All };

std::string_view to_string(Scenario s);
Scenario scenario_from_string(std::string_view s);

struct TrainConfig {
  double base_lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::size_t epochs = 60;
  std::size_t step_epochs = 25;
  double step_factor = 10.0;
  std::size_t batch_size = 32;
  Scenario scenario = Scenario::All;
  std::uint64_t seed = 0;

  /// Throws ConfigError unless base_lr >= 0, 0 <= momentum < 1, step_factor > 1
  /// and the counts are positive. base_lr = 0 is accepted as a no-op run.
  void validate() const;
};

/// base_lr / step_factor^floor(epoch / step_epochs).
double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch);

/// Momentum buffers keyed by node name, zero-initialised on first use.
struct OptimState {
  std::map<std::string, std::vector<double>, std::less<>> velocity;
};

/// One momentum-SGD update of a single tensor:
///   g' = grad + weight_decay * param   (only when `apply_decay`)
///   v  = momentum * v - lr * g'
///   p  = p + v
/// Throws NonFiniteError naming `tensor` if any gradient entry is NaN/Inf;
/// the tensor is left untouched in that case.
void sgd_update(std::string_view tensor, std::span<double> param, std::span<const double> grad,
                std::span<double> velocity, double lr, double momentum, double weight_decay,
                bool apply_decay);

/// Applies sgd_update to every parameterised node of an unfrozen group, using
/// lr_epoch * group.lr_multiplier. NormScale scales are never decayed.
void sgd_step(NetworkGraph& net, const Gradients& grads, OptimState& state, double lr_epoch,
              const TrainConfig& cfg);

/// Freezes/unfreezes groups: "new" is always trainable; NewOnly freezes every
/// other group; FromTopMinus1 also opens the top pre-existing hidden Dense;
/// FromTopMinus2 the two top ones; All opens everything.
void apply_scenario(NetworkGraph& net, Scenario scenario);

struct EvalResult {
  double macro_accuracy = 0.0;
  double micro_accuracy = 0.0;
  std::vector<double> per_class;
};

/// argmax predictions, ties broken by the lowest class index.
std::vector<Label> predict(const NetworkGraph& net, const Matrix& features);

/// Mean of per-class accuracies over classes present in the set.
double evaluate(const NetworkGraph& net, const Dataset& data);
EvalResult evaluate_detailed(const NetworkGraph& net, const Dataset& data);
EvalResult score_predictions(std::span<const Label> predicted, std::span<const Label> labels,
                             std::size_t class_count);

struct RunResult {
  std::vector<double> train_loss;
  std::vector<double> val_accuracy;
  std::vector<double> val_micro_accuracy;
  double test_accuracy = 0.0;
  double wall_clock_seconds = 0.0;
};

/// Raised when the loss turns non-finite. The network passed to train() has
/// been rolled back to the state at the start of the failing epoch, which is
/// also carried here.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, NetworkGraph last_good, std::size_t epoch)
      : Error(what), last_good_(std::move(last_good)), epoch_(epoch) {}
  const NetworkGraph& last_good() const noexcept { return last_good_; }
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  NetworkGraph last_good_;
  std::size_t epoch_;
};

/// Called after every epoch with the epoch index and the current network.
using EpochHook = std::function<void(std::size_t, const NetworkGraph&)>;

/// Mini-batch momentum SGD. Each epoch reshuffles with an Rng seeded from
/// cfg.seed; the last partial batch is kept. Frozen groups are skipped.
/// Deterministic in (net, data, cfg).
RunResult train(NetworkGraph& net, const Dataset& train_set, const Dataset& val_set,
                const TrainConfig& cfg, const EpochHook& on_epoch = {});

/// Learning-without-forgetting probe: copies `net`, attaches a fresh
/// classifier with source_train.class_count outputs, trains only group "new"
/// (classifier plus any grown layers) and returns macro accuracy on `source_eval`.
double relearn_source_classifier(const NetworkGraph& net, const Dataset& source_train,
                                 const Dataset& source_eval, TrainConfig cfg);

}  // namespace growbrain
