#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "growbrain/error.hpp"
#include "growbrain/network.hpp"

namespace growbrain {

inline constexpr std::string_view kCheckpointVersion = "GROWBRAIN-CKPT-1";

class LoadError : public Error {
 public:
  enum class Kind { Io, VersionMismatch, Malformed, ShapeInconsistency };

  LoadError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Text header followed by raw little-endian doubles:
///
///   GROWBRAIN-CKPT-1
///   input_width 4
///   output loss
///   feature_output relu2
///   groups 3
///   group fc1 lr_multiplier 1 frozen 0 decay 1
///   ...
///   provenance 1
///   entry widen target=fc2 size=4 ...
///   nodes 6
///   node fc1 kind Dense group fc1 inputs 1 input tensor weights 8 5
///   node norm2 kind NormScale group new inputs 1 relu2 tensor gamma 8 epsilon 1e-12
///   ...
///   data 1234
///   <1234 bytes: every tensor in node order, row-major>
///
/// Reals in the header use the shortest round-trip decimal form.
std::string serialize_checkpoint(const NetworkGraph& net);
NetworkGraph parse_checkpoint(std::string_view bytes);

void save_checkpoint(const NetworkGraph& net, const std::filesystem::path& path);
NetworkGraph load_checkpoint(const std::filesystem::path& path);

}  // namespace growbrain
