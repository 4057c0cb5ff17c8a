#include "adderkernel/hardware_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "adderkernel/errors.hpp"
#include "adderkernel/network.hpp"

namespace adderkernel {

std::string to_string(KernelScheme s) {
  switch (s) {
    case KernelScheme::two_adders: return "2A";
    case KernelScheme::one_comparator_one_adder: return "1C1A";
    case KernelScheme::multiply: return "mult";
  }
  return "unknown";
}

KernelScheme parse_kernel_scheme(const std::string& s) {
  if (s == "2A" || s == "2a" || s == "two_adders") return KernelScheme::two_adders;
  if (s == "1C1A" || s == "1c1a" || s == "one_comparator_one_adder") {
    return KernelScheme::one_comparator_one_adder;
  }
  if (s == "mult" || s == "multiply") return KernelScheme::multiply;
  throw std::invalid_argument("unknown kernel scheme '" + s + "' (use 2A, 1C1A or mult)");
}

void DatapathConfig::validate_structure() const {
  if (p_in < 2 || !is_power_of_two(static_cast<std::uint64_t>(p_in))) {
    throw std::invalid_argument("P_in must be a power of two >= 2, got " +
                                std::to_string(p_in));
  }
  if (p_out < 1) throw std::invalid_argument("P_out must be >= 1");
  if (dw < 1) throw std::invalid_argument("DW must be >= 1");
  if (!(utilization > 0.0 && utilization <= 1.0)) {
    throw std::invalid_argument("utilization must be in (0, 1]");
  }
  if (!(freq_mhz > 0.0)) throw std::invalid_argument("clock frequency must be > 0");
  if (comparator_weight < 0.0) throw std::invalid_argument("comparator weight must be >= 0");
}

void DatapathConfig::validate() const {
  validate_structure();
  if (dw < 4 || dw > 32) {
    throw std::invalid_argument("DW must be in [4, 32], got " + std::to_string(dw));
  }
}

int ceil_log2(std::uint64_t n) {
  int bits = 0;
  while ((std::uint64_t{1} << bits) < n) ++bits;
  return bits;
}

bool is_power_of_two(std::uint64_t n) { return n != 0 && (n & (n - 1)) == 0; }

int adder_tree_width(int dw, int p_in) {
  return dw + ceil_log2(static_cast<std::uint64_t>(p_in));
}

int cnn_tree_width(int dw, int p_in) {
  return 2 * dw + ceil_log2(static_cast<std::uint64_t>(p_in)) - 1;
}

int adder_acc_bits(int dw, std::uint64_t terms) {
  return dw + ceil_log2(std::max<std::uint64_t>(terms, 1)) + 1;
}

int mult_acc_bits(int dw, std::uint64_t terms) {
  return 2 * dw - 1 + ceil_log2(std::max<std::uint64_t>(terms, 1));
}

bool fits_signed(std::int64_t v, int bits) {
  if (bits >= 64) return true;
  const std::int64_t hi = (std::int64_t{1} << (bits - 1)) - 1;
  return v >= -hi - 1 && v <= hi;
}

std::pair<double, double> layer_resources(std::uint64_t ch_in, std::uint64_t ch_out,
                                          int dw, KernelScheme scheme,
                                          double comparator_weight) {
  const double in = static_cast<double>(ch_in), out = static_cast<double>(ch_out);
  const double d = dw;
  double per_kernel = 0.0;
  int tree_width = 0;
  switch (scheme) {
    case KernelScheme::two_adders:
      per_kernel = d * 2.0;
      tree_width = dw + ceil_log2(ch_in);
      break;
    case KernelScheme::one_comparator_one_adder:
      per_kernel = d * (1.0 + comparator_weight);
      tree_width = dw + ceil_log2(ch_in);
      break;
    case KernelScheme::multiply:
      per_kernel = d * d;
      tree_width = 2 * dw + ceil_log2(ch_in) - 1;
      break;
  }
  const double kernel = out * in * per_kernel;
  const double tree = ch_in > 1 ? out * static_cast<double>(tree_width) * (in - 1.0) : 0.0;
  return {kernel, tree};
}

namespace {

CostReport make_report(const DatapathConfig& cfg, KernelScheme scheme) {
  CostReport r;
  r.config = cfg;
  r.config.scheme = scheme;
  const auto [kernel, tree] =
      layer_resources(static_cast<std::uint64_t>(cfg.p_in),
                      static_cast<std::uint64_t>(cfg.p_out), cfg.dw, scheme,
                      cfg.comparator_weight);
  r.kernel_units = kernel;
  r.tree_units = tree;
  r.total_units = kernel + tree;
  r.throughput_gops = throughput_gops(cfg);
  return r;
}

KernelScheme adder_scheme(const DatapathConfig& cfg) {
  return cfg.scheme == KernelScheme::multiply ? KernelScheme::two_adders : cfg.scheme;
}

}  // namespace

CostReport adder_resources(const DatapathConfig& cfg) {
  cfg.validate_structure();
  if (cfg.scheme == KernelScheme::multiply) {
    throw std::invalid_argument("adder_resources: scheme is multiply");
  }
  CostReport r = make_report(cfg, cfg.scheme);
  r.savings_vs_multiply = 1.0 - r.total_units / make_report(cfg, KernelScheme::multiply).total_units;
  return r;
}

CostReport cnn_resources(const DatapathConfig& cfg) {
  cfg.validate_structure();
  if (cfg.scheme != KernelScheme::multiply) {
    throw std::invalid_argument("cnn_resources: scheme must be multiply");
  }
  CostReport r = make_report(cfg, KernelScheme::multiply);
  r.savings_vs_multiply = 0.0;
  return r;
}

double savings(const DatapathConfig& cfg) {
  cfg.validate_structure();
  DatapathConfig a = cfg, m = cfg;
  a.scheme = adder_scheme(cfg);
  m.scheme = KernelScheme::multiply;
  return 1.0 - adder_resources(a).total_units / cnn_resources(m).total_units;
}

double throughput_gops(const DatapathConfig& cfg) {
  return 2.0 * static_cast<double>(cfg.parallelism()) * cfg.freq_mhz * cfg.utilization / 1000.0;
}

double calibrate_utilization(double gops, int parallelism, double freq_mhz) {
  if (parallelism <= 0 || !(freq_mhz > 0.0)) {
    throw std::invalid_argument("calibrate_utilization: bad parallelism or frequency");
  }
  return gops * 1000.0 / (2.0 * parallelism * freq_mhz);
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& EnergyTable::known_operations() {
  static const std::vector<std::string> ops{"add", "multiply", "compare", "xnor",
                                            "memristor-mac"};
  return ops;
}

EnergyTable EnergyTable::builtin() {
  EnergyTable t;
  t.set("add", "fp32", {1.0, 1.0});
  t.set("multiply", "fp32", {4.11, 1.84});
  t.set("add", "fix16", {1.0, 1.0});
  t.set("multiply", "fix16", {15.7, 14.8});
  return t;
}

void EnergyTable::set(const std::string& op, const std::string& datatype, EnergyEntry e) {
  const auto& ops = known_operations();
  if (std::find(ops.begin(), ops.end(), op) == ops.end()) {
    throw std::invalid_argument("energy table: unknown operation '" + op + "'");
  }
  if (datatype.empty()) throw std::invalid_argument("energy table: empty datatype");
  if (!(e.rel_energy > 0.0) || !(e.rel_area > 0.0) || !std::isfinite(e.rel_energy) ||
      !std::isfinite(e.rel_area)) {
    throw std::invalid_argument("energy table: entries must be finite and > 0 (" + op + "," +
                                datatype + ")");
  }
  if (op == "add" && (e.rel_energy != 1.0 || e.rel_area != 1.0)) {
    throw std::invalid_argument("energy table: adder row for " + datatype +
                                " must be exactly 1.0 (table is adder-normalised)");
  }
  rows_[{op, datatype}] = e;
}

void EnergyTable::merge(const EnergyTable& other) {
  for (const auto& [key, e] : other.rows_) rows_[key] = e;
}

EnergyTable EnergyTable::parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("energy table: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "op,datatype,rel_energy,rel_area") {
    throw std::invalid_argument("energy table: header must be 'op,datatype,rel_energy,rel_area'");
  }
  EnergyTable t;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 4) {
      throw std::invalid_argument("energy table line " + std::to_string(lineno) +
                                  ": expected 4 fields");
    }
    try {
      std::size_t pe = 0, pa = 0;
      const double e = std::stod(f[2], &pe);
      const double a = std::stod(f[3], &pa);
      if (pe != f[2].size() || pa != f[3].size()) throw std::invalid_argument("trailing");
      t.set(f[0], f[1], {e, a});
    } catch (const std::invalid_argument& ex) {
      throw std::invalid_argument("energy table line " + std::to_string(lineno) + ": " +
                                  ex.what());
    }
  }
  return t;
}

EnergyTable EnergyTable::load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open energy table " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

const EnergyEntry& EnergyTable::lookup(const std::string& op,
                                       const std::string& datatype) const {
  const auto it = rows_.find({op, datatype});
  if (it == rows_.end()) {
    throw UnknownEntryError("energy table has no entry for (" + op + ", " + datatype + ")");
  }
  return it->second;
}

double EnergyTable::energy(const std::string& op, const std::string& datatype) const {
  return lookup(op, datatype).rel_energy;
}

double EnergyTable::area(const std::string& op, const std::string& datatype) const {
  return lookup(op, datatype).rel_area;
}

bool EnergyTable::contains(const std::string& op, const std::string& datatype) const {
  return rows_.count({op, datatype}) != 0;
}

std::string EnergyTable::to_csv() const {
  std::ostringstream os;
  os << "op,datatype,rel_energy,rel_area\n";
  for (const auto& [key, e] : rows_) {
    os << key.first << ',' << key.second << ',' << e.rel_energy << ',' << e.rel_area << '\n';
  }
  return os.str();
}

double kernel_energy(const std::string& op, const std::string& datatype,
                     const EnergyTable& table) {
  return table.energy(op, datatype);
}

double kernel_area(const std::string& op, const std::string& datatype,
                   const EnergyTable& table) {
  return table.area(op, datatype);
}

double position_energy(KernelScheme scheme, int dw, int p_in, const std::string& datatype,
                       const EnergyTable& table) {
  const double add = table.energy("add", datatype);
  switch (scheme) {
    case KernelScheme::two_adders:
      return 2.0 * add + add * adder_tree_width(dw, p_in) / dw;
    case KernelScheme::one_comparator_one_adder:
      return table.energy("compare", datatype) + add +
             add * adder_tree_width(dw, p_in) / dw;
    case KernelScheme::multiply:
      return table.energy("multiply", datatype) + add * cnn_tree_width(dw, p_in) / dw;
  }
  return 0.0;
}

NetworkEnergy network_energy(const NetworkSpec& spec, const DatapathConfig& cfg,
                             const EnergyTable& table, const std::string& datatype) {
  cfg.validate_structure();
  NetworkEnergy out;
  if (spec.layers.empty()) return out;
  const auto shapes = spec.infer_shapes();
  const KernelScheme scheme = adder_scheme(cfg);
  const double e_adder = position_energy(scheme, cfg.dw, cfg.p_in, datatype, table);
  const double e_mult =
      position_energy(KernelScheme::multiply, cfg.dw, cfg.p_in, datatype, table);
  int conv_no = 0, fc_no = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (!l.has_kernel()) continue;
    LayerCost c;
    c.kind = to_string(l.kind);
    c.name = l.kind == LayerKind::conv ? "conv" + std::to_string(++conv_no)
                                       : "fc" + std::to_string(++fc_no);
    c.kernel_operators = l.conv.in_channels * l.conv.out_channels;
    c.kernel_positions = shape_size(shapes[i]) * l.conv.terms_per_output();
    const auto [k, t] = layer_resources(l.conv.in_channels, l.conv.out_channels, cfg.dw,
                                        scheme, cfg.comparator_weight);
    c.kernel_units = k;
    c.tree_units = t;
    c.energy_units = static_cast<double>(c.kernel_positions) * e_adder;
    c.multiply_energy_units = static_cast<double>(c.kernel_positions) * e_mult;
    out.adder_energy += c.energy_units;
    out.multiply_energy += c.multiply_energy_units;
    out.per_layer.push_back(std::move(c));
  }
  out.ratio = out.multiply_energy > 0.0 ? out.adder_energy / out.multiply_energy : 0.0;
  return out;
}

// ---------------------------------------------------------------------------

KernelTerm adder_kernel_term(std::int64_t feature, std::int64_t weight, int dw,
                             KernelScheme scheme) {
  // Operands are DW-bit two's complement; differences need DW+1 bits.
  const std::int64_t mask = (std::int64_t{1} << (dw + 1)) - 1;
  const auto wrap = [&](std::int64_t v) {
    v &= mask;
    if (v & (std::int64_t{1} << dw)) v -= std::int64_t{1} << (dw + 1);
    return v;
  };
  std::int64_t magnitude = 0;
  switch (scheme) {
    case KernelScheme::two_adders: {
      const std::int64_t d0 = wrap(feature - weight);
      const std::int64_t d1 = wrap(weight - feature);
      magnitude = d0 >= 0 ? d0 : d1;  // sign bit of d0 drives the mux
      break;
    }
    case KernelScheme::one_comparator_one_adder:
      magnitude = feature >= weight ? wrap(feature - weight) : wrap(weight - feature);
      break;
    case KernelScheme::multiply:
      throw std::invalid_argument("adder_kernel_term: multiply is not an adder scheme");
  }
  KernelTerm t;
  t.value = -magnitude;
  t.magnitude_overflow = magnitude > (std::int64_t{1} << dw) - 1;
  return t;
}

TreeTrace simulate_adder_tree(std::span<const std::int64_t> terms, int dw, int p_in) {
  if (p_in < 2 || !is_power_of_two(static_cast<std::uint64_t>(p_in))) {
    throw std::invalid_argument("simulate_adder_tree: P_in must be a power of two >= 2");
  }
  if (terms.size() != static_cast<std::size_t>(p_in)) {
    throw std::invalid_argument("simulate_adder_tree: expected " + std::to_string(p_in) +
                                " terms, got " + std::to_string(terms.size()));
  }
  TreeTrace trace;
  std::vector<std::int64_t> level(terms.begin(), terms.end());
  for (int l = 0;; ++l) {
    TreeLevel info;
    info.declared_width = dw + l;
    const std::int64_t limit =
        info.declared_width >= 63 ? INT64_MAX : (std::int64_t{1} << info.declared_width) - 1;
    for (auto v : level) {
      const std::int64_t mag = v < 0 ? -v : v;
      info.max_magnitude = std::max(info.max_magnitude, mag);
      if (mag > limit) trace.overflow = true;
    }
    trace.levels.push_back(info);
    if (level.size() == 1) break;
    std::vector<std::int64_t> next(level.size() / 2);
    for (std::size_t i = 0; i < next.size(); ++i) next[i] = level[2 * i] + level[2 * i + 1];
    level = std::move(next);
  }
  trace.sum = level.front();
  return trace;
}

}  // namespace adderkernel
