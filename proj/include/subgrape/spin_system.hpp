#pragma once

#include "subgrape/operator_algebra.hpp"

#include <charconv>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

namespace subgrape {

/// Malformed user input (molecule, pulse, partition or target text).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public InputError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : InputError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct Spin {
  std::string label;
  std::string species;
  double frequency_hz = 0.0;
};

struct Channel {
  std::string species;
  double offset_hz = 0.0;
};

/// A named partition as written in a molecule file: block name -> spin labels.
struct PartitionSpec {
  std::string name;
  std::vector<std::pair<std::string, std::vector<std::string>>> blocks;
};

using SpinPair = std::pair<std::size_t, std::size_t>;

inline SpinPair ordered_pair(std::size_t i, std::size_t j) {
  return i < j ? SpinPair{i, j} : SpinPair{j, i};
}

namespace detail {

inline std::string format_shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last) return std::nullopt;
  return v;
}

inline std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream is{std::string(line)};
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace detail

class SpinSystem {
 public:
  std::vector<Spin> spins;
  std::vector<Channel> channels;
  /// Keys satisfy first < second; values in Hz.
  std::map<SpinPair, double> couplings;
  std::vector<PartitionSpec> partitions;

  std::size_t size() const { return spins.size(); }

  std::optional<std::size_t> index_of(std::string_view label) const {
    for (std::size_t i = 0; i < spins.size(); ++i) {
      if (spins[i].label == label) return i;
    }
    return std::nullopt;
  }

  std::size_t require_index(std::string_view label) const {
    auto idx = index_of(label);
    if (!idx) throw InputError("unknown spin label '" + std::string(label) + "'");
    return *idx;
  }

  double coupling(std::size_t i, std::size_t j) const {
    auto it = couplings.find(ordered_pair(i, j));
    return it == couplings.end() ? 0.0 : it->second;
  }

  const Channel* channel_for(std::string_view species) const {
    for (const auto& c : channels) {
      if (c.species == species) return &c;
    }
    return nullptr;
  }

  const PartitionSpec* partition(std::string_view name) const {
    for (const auto& p : partitions) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }

  /// Restriction to the given labels (kept in original order). Couplings and
  /// partitions are restricted too; channels without spins are kept.
  SpinSystem subset(const std::vector<std::string>& labels) const {
    std::set<std::size_t> keep;
    for (const auto& l : labels) keep.insert(require_index(l));
    SpinSystem out;
    out.channels = channels;
    std::map<std::size_t, std::size_t> remap;
    for (std::size_t i : keep) {
      remap[i] = out.spins.size();
      out.spins.push_back(spins[i]);
    }
    for (const auto& [key, j] : couplings) {
      if (keep.count(key.first) && keep.count(key.second)) {
        out.couplings[ordered_pair(remap[key.first], remap[key.second])] = j;
      }
    }
    for (const auto& p : partitions) {
      PartitionSpec q{p.name, {}};
      for (const auto& [bname, blabels] : p.blocks) {
        std::vector<std::string> kept;
        for (const auto& l : blabels) {
          if (keep.count(require_index(l))) kept.push_back(l);
        }
        if (!kept.empty()) q.blocks.emplace_back(bname, kept);
      }
      out.partitions.push_back(std::move(q));
    }
    return out;
  }

  /// Copy with the given couplings set to zero (removed).
  SpinSystem without_couplings(const std::set<SpinPair>& removed) const {
    SpinSystem out = *this;
    for (const auto& p : removed) out.couplings.erase(ordered_pair(p.first, p.second));
    return out;
  }
};

inline void validate(const SpinSystem& sys) {
  std::set<std::string> labels;
  for (const auto& s : sys.spins) {
    if (!labels.insert(s.label).second) throw InputError("duplicate spin label '" + s.label + "'");
    if (!sys.channel_for(s.species)) {
      throw InputError("spin '" + s.label + "' has species '" + s.species + "' without a CHANNEL");
    }
  }
  for (const auto& [key, j] : sys.couplings) {
    if (key.first >= key.second || key.second >= sys.size()) {
      throw InputError("invalid coupling index pair");
    }
  }
}

/// Parses the line-oriented molecule format (CHANNEL / SPIN / J / PARTITION, '#' comments).
/// PARTITION block names may be qualified as "<partition>/<block>"; unqualified
/// names belong to the partition "default".
inline SpinSystem parse_molecule(std::string_view text) {
  SpinSystem sys;
  struct PendingJ {
    std::size_t line;
    std::string a, b;
    double hz;
  };
  std::vector<PendingJ> pending;
  std::set<std::string> labels;
  std::size_t lineno = 0;
  std::istringstream input{std::string(text)};
  std::string raw;
  while (std::getline(input, raw)) {
    ++lineno;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    const std::string& kw = tok[0];
    auto number = [&](const std::string& s) {
      auto v = detail::parse_double(s);
      if (!v || !std::isfinite(*v)) throw ParseError(lineno, "invalid number '" + s + "'");
      return *v;
    };
    if (kw == "CHANNEL") {
      if (tok.size() != 3) throw ParseError(lineno, "expected: CHANNEL <species> <offset_hz>");
      if (sys.channel_for(tok[1])) throw ParseError(lineno, "duplicate channel '" + tok[1] + "'");
      sys.channels.push_back({tok[1], number(tok[2])});
    } else if (kw == "SPIN") {
      if (tok.size() != 4) throw ParseError(lineno, "expected: SPIN <label> <species> <frequency_hz>");
      if (!labels.insert(tok[1]).second) {
        throw ParseError(lineno, "duplicate spin label '" + tok[1] + "'");
      }
      sys.spins.push_back({tok[1], tok[2], number(tok[3])});
    } else if (kw == "J") {
      if (tok.size() != 4) throw ParseError(lineno, "expected: J <label1> <label2> <J_hz>");
      pending.push_back({lineno, tok[1], tok[2], number(tok[3])});
    } else if (kw == "PARTITION") {
      if (tok.size() < 3) throw ParseError(lineno, "expected: PARTITION <block_name> <label> ...");
      std::string pname = "default";
      std::string bname = tok[1];
      if (auto slash = bname.find('/'); slash != std::string::npos) {
        pname = bname.substr(0, slash);
        bname = bname.substr(slash + 1);
        if (pname.empty() || bname.empty()) throw ParseError(lineno, "malformed block name '" + tok[1] + "'");
      }
      PartitionSpec* spec = nullptr;
      for (auto& p : sys.partitions) {
        if (p.name == pname) spec = &p;
      }
      if (!spec) {
        sys.partitions.push_back({pname, {}});
        spec = &sys.partitions.back();
      }
      for (const auto& [existing, _] : spec->blocks) {
        if (existing == bname) throw ParseError(lineno, "duplicate block '" + bname + "'");
      }
      spec->blocks.emplace_back(bname, std::vector<std::string>(tok.begin() + 2, tok.end()));
    } else {
      throw ParseError(lineno, "unknown directive '" + kw + "'");
    }
  }

  for (const auto& pj : pending) {
    auto ia = sys.index_of(pj.a);
    if (!ia) throw ParseError(pj.line, "coupling references unknown spin '" + pj.a + "'");
    auto ib = sys.index_of(pj.b);
    if (!ib) throw ParseError(pj.line, "coupling references unknown spin '" + pj.b + "'");
    if (*ia == *ib) throw ParseError(pj.line, "self-coupling of '" + pj.a + "'");
    if (!sys.couplings.emplace(ordered_pair(*ia, *ib), pj.hz).second) {
      throw ParseError(pj.line, "duplicate coupling " + pj.a + "-" + pj.b);
    }
  }
  for (const auto& p : sys.partitions) {
    for (const auto& [bname, blabels] : p.blocks) {
      for (const auto& l : blabels) {
        if (!sys.index_of(l)) {
          throw InputError("partition '" + p.name + "' block '" + bname + "' references unknown spin '" + l + "'");
        }
      }
    }
  }
  validate(sys);
  return sys;
}

/// Canonical text form; parse_molecule(write_molecule(s)) reproduces s exactly.
inline std::string write_molecule(const SpinSystem& sys) {
  std::string out;
  for (const auto& c : sys.channels) {
    out += "CHANNEL " + c.species + " " + detail::format_shortest(c.offset_hz) + "\n";
  }
  for (const auto& s : sys.spins) {
    out += "SPIN " + s.label + " " + s.species + " " + detail::format_shortest(s.frequency_hz) + "\n";
  }
  for (const auto& [key, j] : sys.couplings) {
    out += "J " + sys.spins[key.first].label + " " + sys.spins[key.second].label + " " +
           detail::format_shortest(j) + "\n";
  }
  for (const auto& p : sys.partitions) {
    for (const auto& [bname, labels] : p.blocks) {
      const std::string qualified = p.name == "default" ? bname : p.name + "/" + bname;
      out += "PARTITION " + qualified + " " + detail::join(labels, " ") + "\n";
    }
  }
  return out;
}

/// Rotating-frame offsets Omega_i = -2*pi*(omega_i - O_channel), rad/s.
inline std::vector<double> rotating_offsets(const SpinSystem& sys) {
  std::vector<double> out;
  out.reserve(sys.size());
  for (const auto& s : sys.spins) {
    const Channel* c = sys.channel_for(s.species);
    if (!c) throw InputError("no CHANNEL for species '" + s.species + "'");
    out.push_back(-kTwoPi * (s.frequency_hz - c->offset_hz));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Partitions

struct SubsystemPartition {
  /// Each block lists spin indices in ascending order.
  std::vector<std::vector<std::size_t>> blocks;
  std::vector<std::string> names;
  /// Couplings ignored entirely (not even treated to first order).
  std::set<SpinPair> dropped;

  std::size_t size() const { return blocks.size(); }

  std::size_t block_dim(std::size_t k) const { return std::size_t{1} << blocks[k].size(); }

  /// Block index holding spin i.
  std::size_t block_of(std::size_t spin) const {
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      for (std::size_t s : blocks[k]) {
        if (s == spin) return k;
      }
    }
    throw InputError("spin index " + std::to_string(spin) + " is not covered by the partition");
  }

  /// Position of spin i within its block's local register.
  std::size_t local_site(std::size_t spin) const {
    const auto& b = blocks[block_of(spin)];
    for (std::size_t f = 0; f < b.size(); ++f) {
      if (b[f] == spin) return f;
    }
    return 0;
  }

  /// All (k, j) with k < j.
  std::vector<std::pair<std::size_t, std::size_t>> pairs() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      for (std::size_t j = k + 1; j < blocks.size(); ++j) out.emplace_back(k, j);
    }
    return out;
  }
};

inline void validate(const SubsystemPartition& part, std::size_t n_spins) {
  if (part.blocks.empty()) throw InputError("partition has no blocks");
  std::vector<int> seen(n_spins, 0);
  for (const auto& b : part.blocks) {
    if (b.empty()) throw InputError("partition block is empty");
    for (std::size_t i = 0; i < b.size(); ++i) {
      if (b[i] >= n_spins) throw InputError("partition references spin index out of range");
      if (i > 0 && b[i] <= b[i - 1]) throw InputError("partition block indices must be strictly ascending");
      ++seen[b[i]];
    }
  }
  for (std::size_t i = 0; i < n_spins; ++i) {
    if (seen[i] != 1) {
      throw InputError(seen[i] == 0 ? "partition does not cover spin index " + std::to_string(i)
                                    : "partition blocks overlap at spin index " + std::to_string(i));
    }
  }
}

inline SubsystemPartition make_partition(const SpinSystem& sys,
                                         const std::vector<std::pair<std::string, std::vector<std::string>>>& blocks) {
  SubsystemPartition part;
  for (const auto& [name, labels] : blocks) {
    std::vector<std::size_t> idx;
    for (const auto& l : labels) idx.push_back(sys.require_index(l));
    std::sort(idx.begin(), idx.end());
    part.blocks.push_back(std::move(idx));
    part.names.push_back(name);
  }
  validate(part, sys.size());
  return part;
}

/// Index form; blocks are sorted and named B1, B2, ...
inline SubsystemPartition make_partition(const SpinSystem& sys, std::vector<std::vector<std::size_t>> blocks) {
  SubsystemPartition part;
  for (auto& b : blocks) {
    std::sort(b.begin(), b.end());
    part.names.push_back("B" + std::to_string(part.names.size() + 1));
    part.blocks.push_back(std::move(b));
  }
  validate(part, sys.size());
  return part;
}

inline SubsystemPartition make_partition(const SpinSystem& sys, const PartitionSpec& spec) {
  return make_partition(sys, spec.blocks);
}

/// Inline form "C1,C2,H4;C3,H2,H3" (blocks named B1, B2, ...).
inline SubsystemPartition parse_inline_partition(const SpinSystem& sys, std::string_view text) {
  std::vector<std::pair<std::string, std::vector<std::string>>> blocks;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find(';', pos);
    if (end == std::string_view::npos) end = text.size();
    std::vector<std::string> labels;
    std::string_view blk = text.substr(pos, end - pos);
    std::size_t p = 0;
    while (p <= blk.size()) {
      std::size_t e = blk.find(',', p);
      if (e == std::string_view::npos) e = blk.size();
      auto tok = detail::split_ws(blk.substr(p, e - p));
      if (tok.size() == 1) labels.push_back(tok[0]);
      else if (tok.size() > 1) throw InputError("malformed partition text '" + std::string(text) + "'");
      p = e + 1;
    }
    if (labels.empty()) throw InputError("empty block in partition '" + std::string(text) + "'");
    blocks.emplace_back("B" + std::to_string(blocks.size() + 1), std::move(labels));
    pos = end + 1;
  }
  return make_partition(sys, blocks);
}

/// Each spin in its own block.
inline SubsystemPartition singleton_partition(std::size_t n) {
  SubsystemPartition part;
  for (std::size_t i = 0; i < n; ++i) {
    part.blocks.push_back({i});
    part.names.push_back("B" + std::to_string(i + 1));
  }
  return part;
}

/// Couplings between spins in different blocks.
inline std::set<SpinPair> inter_block_couplings(const SpinSystem& sys, const SubsystemPartition& part) {
  std::set<SpinPair> out;
  for (const auto& [key, j] : sys.couplings) {
    if (part.block_of(key.first) != part.block_of(key.second)) out.insert(key);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hamiltonians (rad/s)

struct HamiltonianSet {
  std::vector<std::size_t> block_dims;
  std::vector<CMatrix> intra;
  /// (k, j), k < j -> coupling on H_{S_k} (x) H_{S_j}, S_k spins first.
  std::map<std::pair<std::size_t, std::size_t>, CMatrix> pair_couplings;
};

namespace detail {

inline bool is_dropped(const SubsystemPartition& part, std::size_t a, std::size_t b) {
  return part.dropped.count(ordered_pair(a, b)) > 0;
}

/// Diagonal of sum_i w_i sigma_z^i / 2 + sum_{i<j} pi J_ij sigma_z^i sigma_z^j on a register.
inline RVector z_diagonal(const std::vector<double>& omega, const std::vector<std::tuple<std::size_t, std::size_t, double>>& zz,
                          std::size_t n_sites) {
  const std::size_t dim = std::size_t{1} << n_sites;
  RVector diag = RVector::Zero(static_cast<Eigen::Index>(dim));
  for (std::size_t b = 0; b < dim; ++b) {
    auto zval = [&](std::size_t site) { return (b >> (n_sites - 1 - site)) & 1U ? -1.0 : 1.0; };
    double acc = 0.0;
    for (std::size_t s = 0; s < n_sites; ++s) acc += omega[s] * zval(s) / 2.0;
    for (const auto& [s1, s2, jhz] : zz) acc += kPi * jhz * zval(s1) * zval(s2);
    diag(static_cast<Eigen::Index>(b)) = acc;
  }
  return diag;
}

}  // namespace detail

inline HamiltonianSet build_hamiltonians(const SpinSystem& sys, const SubsystemPartition& part) {
  validate(part, sys.size());
  const auto omega = rotating_offsets(sys);
  HamiltonianSet out;
  for (const auto& block : part.blocks) {
    std::vector<double> w;
    std::vector<std::tuple<std::size_t, std::size_t, double>> zz;
    for (std::size_t a = 0; a < block.size(); ++a) {
      w.push_back(omega[block[a]]);
      for (std::size_t b = a + 1; b < block.size(); ++b) {
        const double j = sys.coupling(block[a], block[b]);
        if (j != 0.0 && !detail::is_dropped(part, block[a], block[b])) zz.emplace_back(a, b, j);
      }
    }
    out.block_dims.push_back(std::size_t{1} << block.size());
    out.intra.push_back(detail::z_diagonal(w, zz, block.size()).cast<Complex>().asDiagonal());
  }
  for (const auto& [k, j] : part.pairs()) {
    const auto& bk = part.blocks[k];
    const auto& bj = part.blocks[j];
    const std::size_t n = bk.size() + bj.size();
    std::vector<double> w(n, 0.0);
    std::vector<std::tuple<std::size_t, std::size_t, double>> zz;
    for (std::size_t a = 0; a < bk.size(); ++a) {
      for (std::size_t b = 0; b < bj.size(); ++b) {
        const double jhz = sys.coupling(bk[a], bj[b]);
        if (jhz != 0.0 && !detail::is_dropped(part, bk[a], bj[b])) zz.emplace_back(a, bk.size() + b, jhz);
      }
    }
    out.pair_couplings[{k, j}] = detail::z_diagonal(w, zz, n).cast<Complex>().asDiagonal();
  }
  return out;
}

inline constexpr std::size_t kDefaultSpinCap = 12;

/// Full 2^n Hamiltonian in the global spin order.
inline CMatrix build_full_hamiltonian(const SpinSystem& sys, std::size_t cap = kDefaultSpinCap) {
  if (sys.size() > cap) {
    throw DimensionError("system has " + std::to_string(sys.size()) + " spins; cap is " + std::to_string(cap));
  }
  std::vector<std::tuple<std::size_t, std::size_t, double>> zz;
  for (const auto& [key, j] : sys.couplings) {
    if (j != 0.0) zz.emplace_back(key.first, key.second, j);
  }
  return detail::z_diagonal(rotating_offsets(sys), zz, sys.size()).cast<Complex>().asDiagonal();
}

// ---------------------------------------------------------------------------
// Controls

enum class Axis { x, y };

inline const char* axis_name(Axis a) { return a == Axis::x ? "x" : "y"; }

inline Axis parse_axis(std::string_view s) {
  if (s == "x") return Axis::x;
  if (s == "y") return Axis::y;
  throw InputError("unknown control axis '" + std::string(s) + "'");
}

struct ControlChannel {
  std::string species;
  Axis axis = Axis::x;

  friend bool operator==(const ControlChannel&, const ControlChannel&) = default;
};

/// Channels (species, x) and (species, y) for every CHANNEL, in file order.
inline std::vector<ControlChannel> control_channels(const SpinSystem& sys) {
  std::vector<ControlChannel> out;
  for (const auto& c : sys.channels) {
    out.push_back({c.species, Axis::x});
    out.push_back({c.species, Axis::y});
  }
  return out;
}

struct ControlOperators {
  std::vector<ControlChannel> channels;
  /// ops[c][k]: sum over spins of block k with the channel's species of sigma_axis.
  std::vector<std::vector<CMatrix>> ops;
  /// present[c][k] is false when ops[c][k] is the zero matrix.
  std::vector<std::vector<bool>> present;
};

namespace detail {

inline CMatrix species_sum(const SpinSystem& sys, const std::vector<std::size_t>& sites_global,
                           const ControlChannel& ch, bool* any = nullptr) {
  const std::size_t n = sites_global.size();
  const std::size_t dim = std::size_t{1} << n;
  CMatrix out = CMatrix::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  const CMatrix p = ch.axis == Axis::x ? pauli::x() : pauli::y();
  bool found = false;
  for (std::size_t f = 0; f < n; ++f) {
    if (sys.spins[sites_global[f]].species == ch.species) {
      out += embed_local(p, {f}, n);
      found = true;
    }
  }
  if (any) *any = found;
  return out;
}

}  // namespace detail

inline ControlOperators control_operators(const SpinSystem& sys, const SubsystemPartition& part) {
  ControlOperators out;
  out.channels = control_channels(sys);
  for (const auto& ch : out.channels) {
    std::vector<CMatrix> per_block;
    std::vector<bool> flags;
    for (const auto& block : part.blocks) {
      bool any = false;
      per_block.push_back(detail::species_sum(sys, block, ch, &any));
      flags.push_back(any);
    }
    out.ops.push_back(std::move(per_block));
    out.present.push_back(std::move(flags));
  }
  return out;
}

/// Full-register operator sum_i sigma_axis^i over spins of the channel's species.
inline CMatrix full_control_operator(const SpinSystem& sys, const ControlChannel& ch,
                                     std::size_t cap = kDefaultSpinCap) {
  if (sys.size() > cap) throw DimensionError("system exceeds spin cap");
  std::vector<std::size_t> all(sys.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return detail::species_sum(sys, all, ch);
}

}  // namespace subgrape
