#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace adderkernel {

struct NetworkSpec;

enum class KernelScheme { two_adders, one_comparator_one_adder, multiply };

std::string to_string(KernelScheme s);
KernelScheme parse_kernel_scheme(const std::string& s);

// Parallel convolution datapath: P_in input channels reduced by an adder tree
// for each of P_out output channels, DW-bit features and weights.
struct DatapathConfig {
  int p_in = 64;
  int p_out = 16;
  int dw = 16;
  KernelScheme scheme = KernelScheme::two_adders;
  double freq_mhz = 250.0;
  double utilization = 1.0;
  // Adder-equivalent cost of one DW-bit comparator in the 1C1A kernel.
  double comparator_weight = 1.0;

  // Throws std::invalid_argument on a non-power-of-two P_in, DW outside
  // [4, 32] or utilization outside (0, 1].
  void validate() const;
  // Same checks except the DW range; the resource formulas are defined for
  // any DW >= 1.
  void validate_structure() const;
  int parallelism() const { return p_in * p_out; }
};

// ---------------------------------------------------------------------------
// Datapath widths
// ---------------------------------------------------------------------------

int ceil_log2(std::uint64_t n);
bool is_power_of_two(std::uint64_t n);

// Adder-tree data width for the adder kernel, DW + log2(P_in).
int adder_tree_width(int dw, int p_in);
// Adder-tree data width after a multiplier, 2*DW + log2(P_in) - 1.
int cnn_tree_width(int dw, int p_in);

// Signed accumulator width that holds a sum of `terms` adder-kernel outputs
// -|a - b| with a, b in the symmetric DW-bit range.
int adder_acc_bits(int dw, std::uint64_t terms);
// Signed accumulator width for a sum of `terms` DW x DW products.
int mult_acc_bits(int dw, std::uint64_t terms);

bool fits_signed(std::int64_t v, int bits);

// ---------------------------------------------------------------------------
// Resource model
// ---------------------------------------------------------------------------

struct LayerCost {
  std::string name;
  std::string kind;
  std::uint64_t kernel_operators = 0;  // CH_in * CH_out parallel kernels
  std::uint64_t kernel_positions = 0;  // similarity evaluations per inference
  double kernel_units = 0.0;
  double tree_units = 0.0;
  double energy_units = 0.0;
  double multiply_energy_units = 0.0;
};

struct CostReport {
  DatapathConfig config;
  double kernel_units = 0.0;
  double tree_units = 0.0;
  double total_units = 0.0;
  double energy_units = 0.0;
  double savings_vs_multiply = 0.0;
  double throughput_gops = 0.0;
  std::vector<LayerCost> per_layer;
};

// P_out * {P_in*DW*2 + (DW + log2 P_in)*(P_in - 1)}; the 1C1A scheme charges
// P_in*DW*(1 + comparator_weight) for the kernels instead.
CostReport adder_resources(const DatapathConfig& cfg);
// P_out * {P_in*DW*DW + (2*DW + log2 P_in - 1)*(P_in - 1)}.
CostReport cnn_resources(const DatapathConfig& cfg);
// 1 - adder/cnn units for the same P_in, P_out and DW. A `multiply` scheme
// in cfg is evaluated against the 2A adder kernel.
double savings(const DatapathConfig& cfg);

// Resources for one layer deployed with full channel parallelism
// (P_in = CH_in, P_out = CH_out). Non-power-of-two CH_in rounds the tree
// width up, and CH_in = 1 has no tree.
std::pair<double, double> layer_resources(std::uint64_t ch_in,
                                          std::uint64_t ch_out, int dw,
                                          KernelScheme scheme,
                                          double comparator_weight = 1.0);

// 2 ops (similarity + accumulate) per kernel position per cycle.
double throughput_gops(const DatapathConfig& cfg);
// Utilization that makes throughput_gops() hit `gops`.
double calibrate_utilization(double gops, int parallelism, double freq_mhz);

// ---------------------------------------------------------------------------
// Energy / area table
// ---------------------------------------------------------------------------

class UnknownEntryError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

struct EnergyEntry {
  double rel_energy = 1.0;
  double rel_area = 1.0;
};

// Per-operation energy and area relative to the adder of the same datatype.
class EnergyTable {
 public:
  static const std::vector<std::string>& known_operations();

  // fp32 and fix16 add/multiply rows only.
  static EnergyTable builtin();
  // CSV with header "op,datatype,rel_energy,rel_area".
  static EnergyTable parse_csv(const std::string& text);
  static EnergyTable load_csv(const std::string& path);

  // Rejects unknown ops, non-positive entries and adder rows != 1.0.
  void set(const std::string& op, const std::string& datatype, EnergyEntry e);
  // Rows from `other` replace rows with the same key.
  void merge(const EnergyTable& other);

  double energy(const std::string& op, const std::string& datatype) const;
  double area(const std::string& op, const std::string& datatype) const;
  bool contains(const std::string& op, const std::string& datatype) const;
  std::string to_csv() const;
  std::size_t size() const { return rows_.size(); }

 private:
  const EnergyEntry& lookup(const std::string& op,
                            const std::string& datatype) const;
  std::map<std::pair<std::string, std::string>, EnergyEntry> rows_;
};

double kernel_energy(const std::string& op, const std::string& datatype,
                     const EnergyTable& table);
double kernel_area(const std::string& op, const std::string& datatype,
                   const EnergyTable& table);

// Relative energy of one kernel position (similarity + accumulate) for the
// given scheme. The accumulate add is weighted by tree width / DW.
double position_energy(KernelScheme scheme, int dw, int p_in,
                       const std::string& datatype, const EnergyTable& table);

struct NetworkEnergy {
  double adder_energy = 0.0;
  double multiply_energy = 0.0;
  double ratio = 0.0;  // adder / multiply; 0 for an empty network
  std::vector<LayerCost> per_layer;
};

// Sums kernel positions x per-position energy over every conv/fc layer.
// cfg.scheme selects the adder kernel (two_adders when it is multiply).
NetworkEnergy network_energy(const NetworkSpec& spec, const DatapathConfig& cfg,
                             const EnergyTable& table,
                             const std::string& datatype);

// ---------------------------------------------------------------------------
// Bit-accurate datapath simulation
// ---------------------------------------------------------------------------

// -|a - b| as produced by one adder kernel. Both schemes are modelled at the
// gate level: 2A computes a-b and b-a in parallel and muxes the non-negative
// one, 1C1A compares first and subtracts the smaller operand.
struct KernelTerm {
  std::int64_t value = 0;
  bool magnitude_overflow = false;  // |a-b| does not fit DW unsigned bits
};
KernelTerm adder_kernel_term(std::int64_t feature, std::int64_t weight, int dw,
                             KernelScheme scheme);

struct TreeLevel {
  int declared_width = 0;
  std::int64_t max_magnitude = 0;
};

struct TreeTrace {
  std::vector<TreeLevel> levels;  // level 0 holds the kernel terms
  std::int64_t sum = 0;
  bool overflow = false;
};

// Balanced binary reduction of P_in terms. Level L values must satisfy
// |v| <= 2^(DW+L) - 1; violations set `overflow`.
TreeTrace simulate_adder_tree(std::span<const std::int64_t> terms, int dw,
                              int p_in);

}  // namespace adderkernel
