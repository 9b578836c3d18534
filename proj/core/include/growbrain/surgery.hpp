#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "growbrain/network.hpp"
#include "growbrain/rng.hpp"

namespace growbrain {

/// Learning-rate multiplier of group "new" relative to pre-trained layers.
inline constexpr double kNewLayerLrMultiplier = 10.0;
/// Default per-channel gamma for inserted NormScale nodes.
inline constexpr double kDefaultGammaInit = 10.0;
/// Stddev of freshly initialised weights added by surgery.
inline constexpr double kSurgeryInitStddev = 0.01;

enum class GrowthKind { ReplaceClassifier, Deepen, Widen, DeepenAndWiden, WidenTwice };
enum class InitPolicy { Random, CopyPlusNoise };

std::string_view to_string(GrowthKind kind);
GrowthKind growth_kind_from_string(std::string_view s);
std::string_view to_string(InitPolicy policy);
InitPolicy init_policy_from_string(std::string_view s);

/// Declarative description of one growth surgery.
///
/// `sizes` by kind:
///   ReplaceClassifier  {n_classes}
///   Deepen             {S_D}            fca width
///   Widen              {S_W}            fcK_plus width
///   DeepenAndWiden     {S_DW} or {S_W, S_D}
///   WidenTwice         {S_lower, S_upper}
///
/// `targets` names the Dense layer(s) being widened; empty means the top
/// hidden Dense (plus the one below it for WidenTwice). `classes`, when set,
/// is the width of the re-initialised classifier; otherwise the current
/// classifier width is kept.
struct GrowthPlan {
  GrowthKind kind = GrowthKind::Widen;
  std::vector<std::size_t> sizes;
  std::vector<std::string> targets;
  InitPolicy init = InitPolicy::Random;
  double init_stddev = kSurgeryInitStddev;
  double gamma_init = kDefaultGammaInit;
  bool insert_normscale = true;
  std::optional<std::size_t> classes;
};

struct SurgeryReport {
  std::vector<std::string> added;
  std::vector<std::string> rewired;
  /// Parameters added minus parameters removed, tallied from the nodes touched.
  std::int64_t parameter_delta = 0;
  std::vector<std::string> provenance;
};

/// Makes sure group "new" exists (multiplier 10, unfrozen, decayed).
void ensure_new_group(NetworkGraph& net);

/// Swaps the classifier for a fresh N(0, init_stddev) Dense with n_classes
/// outputs in group "new".
SurgeryReport replace_classifier(NetworkGraph& net, std::size_t n_classes, Rng& rng,
                                 double init_stddev = kSurgeryInitStddev);

/// fca -> relua (-> norma) between feature_output and the classifier.
SurgeryReport grow_deeper(NetworkGraph& net, const GrowthPlan& plan, Rng& rng);

/// Lateral block fcK_plus -> reluK_plus beside fcK, NormScale on both
/// blocks (when enabled) and concatK feeding the classifier.
SurgeryReport grow_wider(NetworkGraph& net, const GrowthPlan& plan, Rng& rng);

/// Widen the top layer, then deepen on top of the concatenation.
SurgeryReport grow_dwa(NetworkGraph& net, const GrowthPlan& plan, Rng& rng);

/// Widen two adjacent layers. The original upper Dense keeps reading only the
/// original lower block; the upper lateral block reads the full lower concat.
SurgeryReport grow_wwa(NetworkGraph& net, const GrowthPlan& plan, Rng& rng);

/// After training a grown network on a task, moves every node of group "new"
/// into its own pre-trained group (named after the node, multiplier 1) and
/// drops group "new", so the next surgery starts a fresh one.
void promote_new_layers(NetworkGraph& net);

/// Dispatches on plan.kind.
SurgeryReport apply_growth(NetworkGraph& net, const GrowthPlan& plan, Rng& rng);

/// Dense layers present on the feature path, in evaluation order, excluding
/// the classifier.
std::vector<std::string> hidden_dense_layers(const NetworkGraph& net);

}  // namespace growbrain
