#include "growbrain/checkpoint.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <vector>

namespace growbrain {

namespace {

std::string format_real(double v) {
  std::array<char, 64> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

void append_le(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(bits & 0xffU));
    bits >>= 8;
  }
}

double read_le(std::string_view bytes, std::size_t offset) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i)
    bits = (bits << 8) | static_cast<unsigned char>(bytes[offset + static_cast<std::size_t>(i)]);
  return std::bit_cast<double>(bits);
}

void check_token(const std::string& s, const char* what) {
  if (s.empty() || s.find_first_of(" \t\r\n") != std::string::npos)
    throw ConfigError(std::string("cannot serialize ") + what + " '" + s +
                      "': names must be non-empty and contain no whitespace");
}

[[noreturn]] void malformed(const std::string& what) {
  throw LoadError(LoadError::Kind::Malformed, "malformed checkpoint: " + what);
}

class HeaderReader {
 public:
  explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view line() {
    auto nl = bytes_.find('\n', pos_);
    if (nl == std::string_view::npos) malformed("unexpected end of header");
    auto out = bytes_.substr(pos_, nl - pos_);
    pos_ = nl + 1;
    return out;
  }

  std::size_t position() const noexcept { return pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

class Tokens {
 public:
  explicit Tokens(std::string_view line) : line_(line) {}

  std::string_view next() {
    while (pos_ < line_.size() && line_[pos_] == ' ') ++pos_;
    if (pos_ >= line_.size()) malformed("missing field in line '" + std::string(line_) + "'");
    auto end = line_.find(' ', pos_);
    if (end == std::string_view::npos) end = line_.size();
    auto tok = line_.substr(pos_, end - pos_);
    pos_ = end;
    return tok;
  }

  void expect(std::string_view keyword) {
    auto tok = next();
    if (tok != keyword)
      malformed("expected '" + std::string(keyword) + "', found '" + std::string(tok) + "'");
  }

  std::size_t count() {
    auto tok = next();
    std::size_t v = 0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
      malformed("bad count '" + std::string(tok) + "'");
    return v;
  }

  double real() {
    auto tok = next();
    double v = 0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
      malformed("bad real '" + std::string(tok) + "'");
    return v;
  }

  bool flag() {
    auto v = count();
    if (v > 1) malformed("flag must be 0 or 1");
    return v == 1;
  }

  bool done() {
    while (pos_ < line_.size() && line_[pos_] == ' ') ++pos_;
    return pos_ >= line_.size();
  }

  std::string_view rest() {
    if (pos_ < line_.size() && line_[pos_] == ' ') ++pos_;
    auto r = line_.substr(std::min(pos_, line_.size()));
    pos_ = line_.size();
    return r;
  }

 private:
  std::string_view line_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const NetworkGraph& net) {
  std::ostringstream h;
  h << kCheckpointVersion << '\n';
  h << "input_width " << net.input_width() << '\n';
  check_token(net.output(), "output name");
  check_token(net.feature_output(), "feature_output name");
  h << "output " << net.output() << '\n';
  h << "feature_output " << net.feature_output() << '\n';
  h << "groups " << net.groups().size() << '\n';
  for (const auto& [name, g] : net.groups()) {
    check_token(name, "group name");
    h << "group " << name << " lr_multiplier " << format_real(g.lr_multiplier) << " frozen "
      << (g.frozen ? 1 : 0) << " decay " << (g.decay_enabled ? 1 : 0) << '\n';
  }
  h << "provenance " << net.provenance().size() << '\n';
  for (const auto& entry : net.provenance()) {
    if (entry.find('\n') != std::string::npos)
      throw ConfigError("provenance entries must be single-line");
    h << "entry " << entry << '\n';
  }

  std::string data;
  h << "nodes " << net.nodes().size() << '\n';
  for (const auto& n : net.nodes()) {
    check_token(n.name, "node name");
    check_token(n.group, "group name");
    h << "node " << n.name << " kind " << to_string(n.kind) << " group " << n.group << " inputs "
      << n.inputs.size();
    for (const auto& in : n.inputs) {
      check_token(in, "input name");
      h << ' ' << in;
    }
    if (const auto* d = std::get_if<DenseParams>(&n.params)) {
      h << " tensor weights " << d->weights.rows() << ' ' << d->weights.cols();
      for (double v : d->weights.values()) append_le(data, v);
    } else if (const auto* p = std::get_if<NormScaleParams>(&n.params)) {
      h << " tensor gamma " << p->gamma.size() << " epsilon " << format_real(p->epsilon);
      for (double v : p->gamma) append_le(data, v);
    }
    h << '\n';
  }
  h << "data " << data.size() << '\n';
  return h.str() + data;
}

NetworkGraph parse_checkpoint(std::string_view bytes) {
  HeaderReader reader(bytes);
  {
    auto nl = bytes.find('\n');
    if (nl == std::string_view::npos) malformed("unexpected end of header");
    auto first = bytes.substr(0, nl);
    if (first != kCheckpointVersion) {
      if (first.starts_with("GROWBRAIN-CKPT-"))
        throw LoadError(LoadError::Kind::VersionMismatch,
                        "checkpoint version '" + std::string(first) + "' is not supported (want " +
                            std::string(kCheckpointVersion) + ")");
      malformed("not a growbrain checkpoint");
    }
    reader.line();
  }

  Tokens t_in(reader.line());
  t_in.expect("input_width");
  NetworkGraph net(t_in.count());

  Tokens t_out(reader.line());
  t_out.expect("output");
  net.set_output(std::string(t_out.next()));
  Tokens t_feat(reader.line());
  t_feat.expect("feature_output");
  net.set_feature_output(std::string(t_feat.next()));

  Tokens t_groups(reader.line());
  t_groups.expect("groups");
  const std::size_t n_groups = t_groups.count();
  for (std::size_t i = 0; i < n_groups; ++i) {
    Tokens t(reader.line());
    t.expect("group");
    ParamGroup g{std::string(t.next())};
    t.expect("lr_multiplier");
    g.lr_multiplier = t.real();
    t.expect("frozen");
    g.frozen = t.flag();
    t.expect("decay");
    g.decay_enabled = t.flag();
    net.add_group(std::move(g));
  }

  Tokens t_prov(reader.line());
  t_prov.expect("provenance");
  const std::size_t n_prov = t_prov.count();
  for (std::size_t i = 0; i < n_prov; ++i) {
    Tokens t(reader.line());
    t.expect("entry");
    net.add_provenance(std::string(t.rest()));
  }

  struct Pending {
    std::size_t node;
    std::size_t elements;
  };
  std::vector<Pending> tensors;

  Tokens t_nodes(reader.line());
  t_nodes.expect("nodes");
  const std::size_t n_nodes = t_nodes.count();
  for (std::size_t i = 0; i < n_nodes; ++i) {
    Tokens t(reader.line());
    t.expect("node");
    LayerNode n;
    n.name = std::string(t.next());
    t.expect("kind");
    try {
      n.kind = layer_kind_from_string(t.next());
    } catch (const ConfigError& e) {
      malformed(e.what());
    }
    t.expect("group");
    n.group = std::string(t.next());
    t.expect("inputs");
    const std::size_t k = t.count();
    for (std::size_t j = 0; j < k; ++j) n.inputs.emplace_back(t.next());
    if (n.kind == LayerKind::Dense) {
      t.expect("tensor");
      t.expect("weights");
      const std::size_t rows = t.count();
      const std::size_t cols = t.count();
      if (cols == 0) throw LoadError(LoadError::Kind::ShapeInconsistency,
                                     "node '" + n.name + "': weights need a bias column");
      n.params = DenseParams{Matrix(rows, cols)};
      tensors.push_back({i, rows * cols});
    } else if (n.kind == LayerKind::NormScale) {
      t.expect("tensor");
      t.expect("gamma");
      NormScaleParams p;
      p.gamma.resize(t.count());
      t.expect("epsilon");
      p.epsilon = t.real();
      tensors.push_back({i, p.gamma.size()});
      n.params = std::move(p);
    }
    if (!t.done()) malformed("trailing fields on node '" + n.name + "'");
    try {
      net.append(std::move(n));
    } catch (const ConfigError& e) {
      malformed(e.what());
    }
  }

  Tokens t_data(reader.line());
  t_data.expect("data");
  const std::size_t data_bytes = t_data.count();
  std::size_t expected = 0;
  for (const auto& p : tensors) expected += p.elements * 8;
  if (data_bytes != expected)
    throw LoadError(LoadError::Kind::ShapeInconsistency,
                    "data section declares " + std::to_string(data_bytes) +
                        " bytes but tensor shapes need " + std::to_string(expected));
  const std::size_t offset = reader.position();
  if (bytes.size() - offset != data_bytes)
    malformed("data section has " + std::to_string(bytes.size() - offset) + " bytes, expected " +
              std::to_string(data_bytes));

  std::size_t cursor = offset;
  auto& nodes = net.mutable_nodes();
  for (const auto& p : tensors) {
    auto& node = nodes[p.node];
    std::span<double> dst = node.kind == LayerKind::Dense
                                ? node.dense_params().weights.values()
                                : std::span<double>(node.norm_params().gamma);
    for (double& v : dst) {
      v = read_le(bytes, cursor);
      cursor += 8;
    }
  }

  try {
    net.validate();
  } catch (const Error& e) {
    throw LoadError(LoadError::Kind::ShapeInconsistency,
                    std::string("checkpoint fails validation: ") + e.what());
  }
  return net;
}

void save_checkpoint(const NetworkGraph& net, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(net);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError(LoadError::Kind::Io, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LoadError(LoadError::Kind::Io, "failed writing '" + path.string() + "'");
}

NetworkGraph load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(LoadError::Kind::Io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace growbrain
