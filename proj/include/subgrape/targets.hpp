#pragma once

#include "subgrape/objective.hpp"

#include <cctype>

namespace subgrape {

/// Angle expression: numbers, `pi`, unary minus, + - * / and parentheses.
inline double parse_angle(std::string_view text) {
  struct Parser {
    std::string_view s;
    std::size_t pos = 0;

    void skip() {
      while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }
    bool eat(char c) {
      skip();
      if (pos < s.size() && s[pos] == c) {
        ++pos;
        return true;
      }
      return false;
    }
    [[noreturn]] void fail() const { throw InputError("invalid angle expression '" + std::string(s) + "'"); }

    double primary() {
      skip();
      if (eat('(')) {
        const double v = sum();
        if (!eat(')')) fail();
        return v;
      }
      if (eat('-')) return -primary();
      if (eat('+')) return primary();
      if (s.substr(pos, 2) == "pi") {
        pos += 2;
        return kPi;
      }
      std::size_t end = pos;
      while (end < s.size() && (std::isdigit(static_cast<unsigned char>(s[end])) || s[end] == '.' || s[end] == 'e' ||
                                s[end] == 'E' ||
                                ((s[end] == '-' || s[end] == '+') && end > pos && (s[end - 1] == 'e' || s[end - 1] == 'E')))) {
        ++end;
      }
      auto v = detail::parse_double(s.substr(pos, end - pos));
      if (end == pos || !v) fail();
      pos = end;
      return *v;
    }
    double product() {
      double v = primary();
      for (;;) {
        if (eat('*')) v *= primary();
        else if (eat('/')) v /= primary();
        else return v;
      }
    }
    double sum() {
      double v = product();
      for (;;) {
        if (eat('+')) v += product();
        else if (eat('-')) v -= product();
        else return v;
      }
    }
  };
  Parser p{text};
  const double v = p.sum();
  p.skip();
  if (p.pos != text.size() || !std::isfinite(v)) p.fail();
  return v;
}

/// exp(-i theta sigma / 2).
inline CMatrix rotation(const CMatrix& sigma, double theta) {
  return std::cos(theta / 2) * pauli::identity() - kI * std::sin(theta / 2) * sigma;
}

struct NamedGate {
  CMatrix matrix;
  std::vector<std::string> labels;  // factor i of `matrix` acts on labels[i]
};

/// "H C1", "Rx(pi/2) C1", "CNOT C1 C2" (control first), "CZ C1 C2".
inline NamedGate parse_gate(std::string_view text) {
  auto tok = detail::split_ws(text);
  if (tok.empty()) throw InputError("empty target description");
  // Rotation angles may contain spaces: rejoin up to the closing parenthesis.
  std::string head = tok[0];
  std::size_t next = 1;
  if (head.find('(') != std::string::npos) {
    while (head.find(')') == std::string::npos && next < tok.size()) head += tok[next++];
  }
  NamedGate g;
  g.labels.assign(tok.begin() + static_cast<std::ptrdiff_t>(next), tok.end());
  auto require = [&](std::size_t n) {
    if (g.labels.size() != n) {
      throw InputError("gate '" + head + "' takes " + std::to_string(n) + " spin label(s) in '" + std::string(text) + "'");
    }
  };
  const double r = 1.0 / std::sqrt(2.0);
  if (head == "H") {
    require(1);
    g.matrix = r * (pauli::x() + pauli::z());
  } else if (head.size() > 3 && head[0] == 'R' && (head[1] == 'x' || head[1] == 'y' || head[1] == 'z') &&
             head[2] == '(' && head.back() == ')') {
    require(1);
    const double theta = parse_angle(std::string_view(head).substr(3, head.size() - 4));
    const CMatrix sigma = head[1] == 'x' ? pauli::x() : head[1] == 'y' ? pauli::y() : pauli::z();
    g.matrix = rotation(sigma, theta);
  } else if (head == "CNOT" || head == "CZ") {
    require(2);
    if (g.labels[0] == g.labels[1]) throw InputError("gate '" + head + "' needs two distinct spins");
    g.matrix = CMatrix::Identity(4, 4);
    if (head == "CNOT") g.matrix.bottomRightCorner(2, 2) = pauli::x();
    else g.matrix(3, 3) = -1.0;
  } else {
    throw InputError("unknown gate '" + head + "'");
  }
  return g;
}

inline TargetGate identity_targets(const SubsystemPartition& part) {
  TargetGate t;
  for (std::size_t k = 0; k < part.size(); ++k) {
    const auto d = static_cast<Eigen::Index>(part.block_dim(k));
    t.blocks.push_back(CMatrix::Identity(d, d));
  }
  return t;
}

/// Applies `gate` after the current block targets. All of its spins must lie in
/// one block: the target must factor over the partition.
inline void apply_gate(TargetGate& targets, const SpinSystem& sys, const SubsystemPartition& part,
                       const NamedGate& gate) {
  std::vector<std::size_t> sites;
  std::optional<std::size_t> block;
  for (const auto& label : gate.labels) {
    const std::size_t spin = sys.require_index(label);
    const std::size_t k = part.block_of(spin);
    if (block && *block != k) {
      throw InputError("target on " + detail::join(gate.labels, ",") + " spans subsystems " + part.names[*block] +
                       " and " + part.names[k] + "; locality constraint: a target gate must act within one subsystem");
    }
    block = k;
    sites.push_back(part.local_site(spin));
  }
  const CMatrix local = embed_local(gate.matrix, sites, part.blocks[*block].size());
  targets.blocks[*block] = local * targets.blocks[*block];
}

inline TargetGate build_targets(const SpinSystem& sys, const SubsystemPartition& part,
                                const std::vector<std::string>& descriptions) {
  TargetGate t = identity_targets(part);
  for (const auto& d : descriptions) apply_gate(t, sys, part, parse_gate(d));
  return t;
}

/// Matrix file: first line d, then d rows of 2d reals (re im re im ...).
inline CMatrix parse_matrix(std::string_view text) {
  std::istringstream in{std::string(text)};
  long long d = 0;
  if (!(in >> d) || d < 1) throw InputError("matrix file: expected a positive dimension");
  CMatrix m(d, d);
  for (long long i = 0; i < d; ++i) {
    for (long long j = 0; j < d; ++j) {
      std::string re, im;
      if (!(in >> re >> im)) throw InputError("matrix file: too few entries");
      auto a = detail::parse_double(re);
      auto b = detail::parse_double(im);
      if (!a || !b || !std::isfinite(*a) || !std::isfinite(*b)) throw InputError("matrix file: invalid entry");
      m(i, j) = Complex(*a, *b);
    }
  }
  std::string extra;
  if (in >> extra) throw InputError("matrix file: trailing data");
  return m;
}

}  // namespace subgrape
