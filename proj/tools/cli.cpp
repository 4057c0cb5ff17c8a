#include "cli.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "adderkernel/errors.hpp"
#include "adderkernel/mnist.hpp"
#include "adderkernel/model_io.hpp"
#include "adderkernel/network.hpp"
#include "adderkernel/quantize_model.hpp"
#include "adderkernel/trainer.hpp"
#include "adderkernel/version.hpp"

namespace adderkernel::cli {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (unsigned i = 0; i < len; ++i) os << std::setw(2) << static_cast<int>(md[i]);
  return os.str();
}

std::string sha256_file(const fs::path& path) { return sha256_hex(mnist::read_file(path)); }

std::map<std::string, std::string> parse_config(const std::string& text) {
  const auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.rfind("--", 0) == 0) key.erase(0, 2);
    if (key.empty()) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    }
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

json RunManifest::to_json() const {
  json j;
  j["command"] = command;
  j["config"] = config;
  j["inputs"] = json::object();
  for (const auto& [p, d] : input_digests) j["inputs"][p] = "sha256:" + d;
  j["seed"] = seed;
  j["version"] = version;
  j["timestamp"] = timestamp;
  return j;
}

fs::path manifest_path(const fs::path& output) {
  return fs::path(output.string() + ".manifest.json");
}

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

json to_json(const DatapathConfig& cfg) {
  return json{{"p_in", cfg.p_in},
              {"p_out", cfg.p_out},
              {"dw", cfg.dw},
              {"scheme", to_string(cfg.scheme)},
              {"freq_mhz", cfg.freq_mhz},
              {"utilization", cfg.utilization},
              {"comparator_weight", cfg.comparator_weight}};
}

json to_json(const LayerCost& l) {
  return json{{"name", l.name},
              {"kind", l.kind},
              {"kernel_operators", l.kernel_operators},
              {"kernel_positions", l.kernel_positions},
              {"kernel_units", l.kernel_units},
              {"tree_units", l.tree_units},
              {"energy_units", number_or_null(l.energy_units)}};
}

json to_json(const CostReport& r) {
  json layers = json::array();
  for (const auto& l : r.per_layer) layers.push_back(to_json(l));
  return json{{"config", to_json(r.config)},
              {"kernel_units", r.kernel_units},
              {"tree_units", r.tree_units},
              {"total_units", r.total_units},
              {"savings", r.savings_vs_multiply},
              {"energy_units", number_or_null(r.energy_units)},
              {"throughput_gops", r.throughput_gops},
              {"per_layer", std::move(layers)}};
}

namespace {

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
  if (!os) throw DataError("write failed for " + path.string());
}

json resolved_config(const CLI::App& app, const CLI::App& sub) {
  json cfg;
  for (const CLI::App* a : {&app, &sub}) {
    for (const CLI::Option* opt : a->get_options()) {
      if (opt->get_lnames().empty()) continue;
      const std::string& name = opt->get_lnames().front();
      if (name == "help" || name == "config" || name == "version") continue;
      if (opt->count() > 0) {
        const auto& res = opt->results();
        std::string v;
        for (std::size_t i = 0; i < res.size(); ++i) v += (i ? "," : "") + res[i];
        cfg[name] = opt->get_type_size() == 0 && v.empty() ? "true" : v;
      } else {
        const std::string d = opt->get_default_str();
        cfg[name] = d.empty() && opt->get_type_size() == 0 ? "false" : d;
      }
    }
  }
  return cfg;
}

void write_manifest(const fs::path& output, const CLI::App& app, const CLI::App& sub,
                    const std::vector<fs::path>& inputs, std::uint64_t seed) {
  RunManifest m;
  m.command = sub.get_name();
  m.config = resolved_config(app, sub);
  for (const auto& p : inputs) m.input_digests[p.string()] = sha256_file(p);
  m.seed = seed;
  m.version = kVersion;
  m.timestamp = utc_timestamp();
  write_text(manifest_path(output), m.to_json().dump(2) + "\n");
}

NetworkSpec build_arch(const std::string& arch, KernelKind kind) {
  if (arch == "lenet5") return build_lenet5(kind);
  throw std::invalid_argument("unknown architecture '" + arch + "' (supported: lenet5)");
}

std::vector<fs::path> mnist_files(const fs::path& dir) {
  return {dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte",
          dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte"};
}

mnist::Split load_data(const fs::path& dir, std::size_t train_limit, std::size_t test_limit) {
  mnist::Split s = mnist::load_dir(dir);
  if (train_limit > 0) s.train = s.train.head(train_limit);
  if (test_limit > 0) s.test = s.test.head(test_limit);
  return s;
}

json format_json(const QFormat& f) {
  return json{{"bits", f.bits}, {"frac_bits", f.frac_bits}, {"clip_max", f.clip_max()}};
}

json coverage_json(const CoverageReport& c) {
  return json{{"fraction_in_clip", c.fraction_in_clip}, {"mse", c.mse}};
}

// Per-layer LeNet costs at full channel parallelism for one scheme.
CostReport network_cost(const NetworkSpec& spec, const DatapathConfig& cfg,
                        const EnergyTable& table, const std::string& datatype) {
  CostReport r = cfg.scheme == KernelScheme::multiply ? cnn_resources(cfg) : adder_resources(cfg);
  r.savings_vs_multiply = cfg.scheme == KernelScheme::multiply ? 0.0 : savings(cfg);
  const bool mult = cfg.scheme == KernelScheme::multiply;
  NetworkEnergy ne;
  bool have_energy = true;
  try {
    ne = network_energy(spec, cfg, table, datatype);
  } catch (const UnknownEntryError&) {
    // Layer shapes and resources do not depend on the table.
    have_energy = false;
    DatapathConfig plain = cfg;
    plain.scheme = KernelScheme::two_adders;
    ne = network_energy(spec, plain, EnergyTable::builtin(), "fix16");
  }
  for (auto& l : ne.per_layer) {
    if (!have_energy) {
      l.energy_units = std::nan("");
    } else if (mult) {
      l.energy_units = l.multiply_energy_units;
    }
  }
  std::size_t k = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& ls = spec.layers[i];
    if (!ls.has_kernel()) continue;
    const auto [ku, tu] = layer_resources(ls.conv.in_channels, ls.conv.out_channels, cfg.dw,
                                          cfg.scheme, cfg.comparator_weight);
    ne.per_layer[k].kernel_units = ku;
    ne.per_layer[k].tree_units = tu;
    ++k;
  }
  r.per_layer = std::move(ne.per_layer);
  r.energy_units = !have_energy ? std::nan("") : mult ? ne.multiply_energy : ne.adder_energy;
  return r;
}

struct CostOptions {
  std::string arch = "lenet5";
  DatapathConfig cfg;
  std::string scheme = "2A";
  std::string table;
  std::string datatype = "fix16";
  std::string out;
};

void add_cost_options(CLI::App* sub, CostOptions& o, bool with_scheme) {
  sub->add_option("--arch", o.arch, "Network architecture")->check(CLI::IsMember({"lenet5"}));
  sub->add_option("--dw", o.cfg.dw, "Data width in bits")->check(CLI::Range(4, 32));
  sub->add_option("--pin", o.cfg.p_in, "Parallel input channels (power of two)");
  sub->add_option("--pout", o.cfg.p_out, "Parallel output channels")->check(CLI::PositiveNumber);
  if (with_scheme) {
    sub->add_option("--scheme", o.scheme, "Kernel scheme: 2A, 1C1A or mult");
  } else {
    sub->add_option("--scheme", o.scheme, "Adder kernel scheme: 2A or 1C1A");
  }
  sub->add_option("--freq", o.cfg.freq_mhz, "Clock frequency in MHz")->check(CLI::PositiveNumber);
  sub->add_option("--utilization", o.cfg.utilization, "Datapath utilization in (0, 1]");
  sub->add_option("--comparator-weight", o.cfg.comparator_weight,
                  "Adder-equivalent cost of a comparator");
  sub->add_option("--table", o.table, "Energy/area CSV merged over the built-in table")
      ->check(CLI::ExistingFile);
  sub->add_option("--datatype", o.datatype, "Energy table datatype");
  sub->add_option("--out", o.out, "Write the JSON report here instead of stdout");
}

EnergyTable cost_table(const CostOptions& o) {
  EnergyTable t = EnergyTable::builtin();
  if (!o.table.empty()) t.merge(EnergyTable::load_csv(o.table));
  return t;
}

void emit_json(const json& j, const std::string& out_path, std::ostream& out) {
  if (out_path.empty()) {
    out << j.dump(2) << "\n";
  } else {
    write_text(out_path, j.dump(2) + "\n");
  }
}

// Prepends options from --config that the user did not give explicitly.
std::vector<std::string> apply_config(const CLI::App& app, std::vector<std::string> args) {
  std::string config_path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    }
  }
  if (config_path.empty()) return args;
  std::ifstream in(config_path);
  if (!in) throw DataError("cannot open config file " + config_path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const auto kv = parse_config(ss.str());

  std::size_t sub_pos = 0;
  const CLI::App* sub = nullptr;
  for (std::size_t i = 1; i < args.size() && !sub; ++i) {
    for (const CLI::App* s : app.get_subcommands({})) {
      if (s->get_name() == args[i]) {
        sub = s;
        sub_pos = i;
        break;
      }
    }
  }
  if (!sub) return args;

  const auto given = [&](const std::string& key) {
    const std::string flag = "--" + key;
    return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
  };
  std::vector<std::string> injected;
  for (const auto& [key, value] : kv) {
    if (given(key)) continue;
    const CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (!opt) opt = app.get_option_no_throw("--" + key);
    if (!opt) throw CLI::ValidationError("config", "unknown key '" + key + "'");
    if (opt->get_type_size() == 0) {
      if (value == "true" || value == "1" || value == "yes") injected.push_back("--" + key);
    } else {
      injected.push_back("--" + key);
      injected.push_back(value);
    }
  }
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub_pos) + 1, injected.begin(),
              injected.end());
  return args;
}

}  // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fixed-point adder-kernel network toolkit", "adderkernel"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));
  std::string config;
  unsigned threads = 1;
  app.add_option("--config", config, "Flat key=value file mirroring the subcommand flags");
  app.add_option("--threads", threads, "Worker threads (results never depend on it)")
      ->envname("ADDERKERNEL_THREADS")
      ->check(CLI::Range(1u, 1024u));

  // train
  std::string data_dir, model_out, kernel = "adder", arch = "lenet5", curve_out,
                                    feature_grad = "hardtanh";
  train::TrainConfig tcfg;
  std::size_t train_limit = 0, test_limit = 0;
  auto* train_cmd = app.add_subcommand("train", "Train a float network on MNIST");
  train_cmd->add_option("--data", data_dir, "Directory with the four MNIST IDX files")->required();
  train_cmd->add_option("--arch", arch, "Network architecture")->check(CLI::IsMember({"lenet5"}));
  train_cmd->add_option("--kernel", kernel, "adder or mult")
      ->check(CLI::IsMember({"adder", "mult", "multiply"}));
  train_cmd->add_option("--epochs", tcfg.epochs)->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch", tcfg.batch_size)->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", tcfg.lr0, "Initial learning rate")->check(CLI::PositiveNumber);
  train_cmd->add_option("--momentum", tcfg.momentum);
  train_cmd->add_option("--weight-decay", tcfg.weight_decay);
  train_cmd->add_option("--seed", tcfg.seed);
  train_cmd->add_option("--feature-grad", feature_grad, "hardtanh or sign")
      ->check(CLI::IsMember({"hardtanh", "sign"}));
  train_cmd->add_option("--adder-lr-eta", tcfg.adder_lr_eta,
                        "Adaptive gradient scale for adder layers (0 = off)");
  train_cmd->add_option("--train-limit", train_limit, "Use the first N training samples (0 = all)");
  train_cmd->add_option("--test-limit", test_limit, "Use the first N test samples (0 = all)");
  train_cmd->add_option("--out", model_out, "Model file")->required();
  train_cmd->add_option("--curve", curve_out, "Curve CSV (default: <out>.curve.csv)");

  // quantize
  std::string q_model, q_out, q_report, q_data;
  int bits = 8;
  std::size_t calib = kDefaultCalibrationSamples, q_test_limit = 0;
  auto* quant_cmd = app.add_subcommand("quantize", "Post-training shared-scale quantization");
  quant_cmd->add_option("--model", q_model, "Float model file")->required();
  quant_cmd->add_option("--bits", bits, "Bit width")->check(CLI::Range(kMinModelBits, kMaxModelBits));
  quant_cmd->add_option("--calib", calib, "Calibration samples from the training set")
      ->check(CLI::PositiveNumber);
  quant_cmd->add_option("--data", q_data, "MNIST directory for calibration and accuracy")
      ->required();
  quant_cmd->add_option("--test-limit", q_test_limit, "Use the first N test samples (0 = all)");
  quant_cmd->add_option("--out", q_out, "Quantized model file")->required();
  quant_cmd->add_option("--report", q_report, "JSON report path");

  // infer
  std::string i_model, i_input, i_labels, i_report;
  std::size_t i_limit = 0;
  auto* infer_cmd = app.add_subcommand("infer", "Integer inference over an IDX image file");
  infer_cmd->add_option("--model", i_model, "Quantized model file")->required();
  infer_cmd->add_option("--input", i_input, "IDX image file")->required();
  infer_cmd->add_option("--labels", i_labels, "IDX label file (enables accuracy)");
  infer_cmd->add_option("--limit", i_limit, "Use the first N images (0 = all)");
  infer_cmd->add_option("--report", i_report, "JSON report path")->required();

  // cost / compare
  CostOptions cost_opts, cmp_opts;
  auto* cost_cmd = app.add_subcommand("cost", "Resource, energy and throughput report");
  add_cost_options(cost_cmd, cost_opts, true);
  auto* cmp_cmd = app.add_subcommand("compare", "Adder kernel vs multiply kernel side by side");
  add_cost_options(cmp_cmd, cmp_opts, false);

  std::vector<std::string> args;
  try {
    args = apply_config(app, raw_args);
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  try {
    if (*train_cmd) {
      tcfg.feature_grad = feature_grad == "sign" ? train::FeatureGrad::sign
                                                 : train::FeatureGrad::hardtanh;
      tcfg.validate();
      const NetworkSpec spec = build_arch(arch, parse_kernel_kind(kernel));
      const mnist::Split data = load_data(data_dir, train_limit, test_limit);
      out << "training " << arch << " (" << to_string(spec.kernel_kind) << ") on "
          << data.train.size() << " samples, " << tcfg.epochs << " epochs\n";
      const train::TrainResult res =
          train::train(spec, data.train, &data.test, tcfg, [&](const train::EpochStats& s) {
            out << "epoch " << s.epoch << "/" << tcfg.epochs << " lr=" << s.lr
                << " loss=" << s.train_loss << " train_acc=" << s.train_acc
                << " test_acc=" << s.test_acc << "\n"
                << std::flush;
          });
      save_model(res.model, model_out);
      if (curve_out.empty()) curve_out = model_out + ".curve.csv";
      std::ostringstream csv;
      train::write_curve_csv(csv, res.curve);
      write_text(curve_out, csv.str());
      write_manifest(model_out, app, *train_cmd, mnist_files(data_dir), tcfg.seed);
      out << "wrote " << model_out << "\n";
      return kOk;
    }

    if (*quant_cmd) {
      const ModelBundle model = load_model(q_model);
      const mnist::Split data = load_data(q_data, calib, q_test_limit);
      const double float_acc = train::float_accuracy(model, data.test);
      const QuantizeResult q = quantize_model(model, data.train, bits);
      const double quant_acc = evaluate_accuracy(q.model, data.test, threads);
      save_model(q.model, q_out);

      json layers = json::array();
      for (const auto& l : q.layers) {
        layers.push_back(json{{"layer", l.layer},
                              {"kind", to_string(model.spec.layers[l.layer].kind)},
                              {"input_format", format_json(l.input_format)},
                              {"weight_format", format_json(l.weight_format)},
                              {"feature_coverage", coverage_json(l.feature_coverage)},
                              {"weight_coverage", coverage_json(l.weight_coverage)},
                              {"degenerate", l.degenerate}});
        out << "layer " << l.layer << " " << to_string(model.spec.layers[l.layer].kind)
            << " " << to_string(l.input_format) << " features in clip "
            << l.feature_coverage.fraction_in_clip << " weights in clip "
            << l.weight_coverage.fraction_in_clip << "\n";
      }
      const json report{{"bits", bits},
                        {"kernel", to_string(model.spec.kernel_kind)},
                        {"calibration_samples", data.train.size()},
                        {"test_samples", data.test.size()},
                        {"float_accuracy", float_acc},
                        {"quantized_accuracy", quant_acc},
                        {"accuracy_drop_pp", 100.0 * (float_acc - quant_acc)},
                        {"layers", std::move(layers)}};
      out << "accuracy float " << float_acc << " -> " << bits << "-bit " << quant_acc << " (drop "
          << 100.0 * (float_acc - quant_acc) << " pp)\n";
      if (!q_report.empty()) write_text(q_report, report.dump(2) + "\n");
      std::vector<fs::path> inputs{q_model};
      for (auto& p : mnist_files(q_data)) inputs.push_back(p);
      write_manifest(q_out, app, *quant_cmd, inputs, 0);
      return kOk;
    }

    if (*infer_cmd) {
      const ModelBundle model = load_model(i_model);
      if (!model.is_quantized()) {
        throw DataError(i_model + " holds a float model; run quantize first");
      }
      const mnist::IdxImages images = mnist::read_images(i_input);
      std::vector<std::uint8_t> labels;
      if (!i_labels.empty()) {
        labels = mnist::read_labels(i_labels);
        if (labels.size() != images.count) {
          throw DataError("label count " + std::to_string(labels.size()) +
                          " does not match image count " + std::to_string(images.count));
        }
      } else {
        labels.assign(images.count, 0);
      }
      Dataset data = mnist::make_dataset(images, labels);
      if (i_limit > 0) data = data.head(i_limit);

      std::vector<QTensor> inputs;
      inputs.reserve(data.size());
      for (std::size_t i = 0; i < data.size(); ++i) {
        inputs.push_back(quantize_input(model, data.image(i)));
      }
      const auto t0 = std::chrono::steady_clock::now();
      const std::vector<InferenceResult> results = forward_batch(model, inputs, threads);
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

      std::vector<int> preds;
      std::vector<std::uint8_t> pred_bytes;
      std::array<std::size_t, 10> histogram{};
      for (const auto& r : results) {
        preds.push_back(r.predicted);
        pred_bytes.push_back(static_cast<std::uint8_t>(r.predicted));
        if (r.predicted >= 0 && r.predicted < 10) ++histogram[static_cast<std::size_t>(r.predicted)];
      }
      json layers = json::array();
      if (!results.empty()) {
        std::vector<LayerStats> agg = results.front().stats;
        for (std::size_t n = 1; n < results.size(); ++n) {
          for (std::size_t l = 0; l < agg.size(); ++l) {
            const LayerStats& s = results[n].stats[l];
            agg[l].min = std::min(agg[l].min, s.min);
            agg[l].max = std::max(agg[l].max, s.max);
            agg[l].saturated += s.saturated;
          }
        }
        for (const auto& s : agg) {
          json j{{"layer", s.layer}, {"kind", s.kind}, {"min", s.min}, {"max", s.max},
                 {"saturated", s.saturated}};
          if (s.acc_bits > 0) j["acc_bits"] = s.acc_bits;
          layers.push_back(std::move(j));
        }
      }
      json report{{"model", i_model},
                  {"bits", model.quant_bits},
                  {"kernel", to_string(model.spec.kernel_kind)},
                  {"samples", data.size()},
                  {"accuracy", nullptr},
                  {"predictions_sha256", sha256_hex(pred_bytes)},
                  {"class_histogram", histogram},
                  {"layers", std::move(layers)}};
      if (!i_labels.empty()) {
        report["accuracy"] = top1_accuracy(preds, data.labels);
        out << "accuracy " << report["accuracy"].get<double>() << " on " << data.size()
            << " images\n";
      }
      out << "inferred " << data.size() << " images in " << std::fixed << std::setprecision(2)
          << secs << " s\n";
      out.unsetf(std::ios::fixed);
      write_text(i_report, report.dump(2) + "\n");
      std::vector<fs::path> in_files{i_model, i_input};
      if (!i_labels.empty()) in_files.emplace_back(i_labels);
      write_manifest(i_report, app, *infer_cmd, in_files, 0);
      return kOk;
    }

    if (*cost_cmd) {
      CostOptions& o = cost_opts;
      o.cfg.scheme = parse_kernel_scheme(o.scheme);
      o.cfg.validate();
      const NetworkSpec spec =
          build_arch(o.arch, o.cfg.scheme == KernelScheme::multiply ? KernelKind::multiply
                                                                      : KernelKind::adder);
      const json report = to_json(network_cost(spec, o.cfg, cost_table(o), o.datatype));
      emit_json(report, o.out, out);
      if (!o.out.empty()) {
        std::vector<fs::path> inputs;
        if (!o.table.empty()) inputs.emplace_back(o.table);
        write_manifest(o.out, app, *cost_cmd, inputs, 0);
      }
      return kOk;
    }

    if (*cmp_cmd) {
      CostOptions& o = cmp_opts;
      DatapathConfig a = o.cfg;
      a.scheme = parse_kernel_scheme(o.scheme);
      if (a.scheme == KernelScheme::multiply) {
        throw std::invalid_argument("compare: --scheme selects the adder kernel (2A or 1C1A)");
      }
      a.validate();
      DatapathConfig m = a;
      m.scheme = KernelScheme::multiply;
      const EnergyTable table = cost_table(o);
      const CostReport ra = network_cost(build_arch(o.arch, KernelKind::adder), a, table, o.datatype);
      const CostReport rm =
          network_cost(build_arch(o.arch, KernelKind::multiply), m, table, o.datatype);
      const double ratio = std::isfinite(ra.energy_units) && std::isfinite(rm.energy_units)
                               ? ra.energy_units / rm.energy_units
                               : std::nan("");
      const json report{{"adder", to_json(ra)},
                        {"multiply", to_json(rm)},
                        {"savings", ra.savings_vs_multiply},
                        {"energy_ratio", number_or_null(ratio)},
                        {"throughput_gops", ra.throughput_gops}};
      emit_json(report, o.out, out);
      if (!o.out.empty()) {
        std::vector<fs::path> inputs;
        if (!o.table.empty()) inputs.emplace_back(o.table);
        write_manifest(o.out, app, *cmp_cmd, inputs, 0);
      }
      return kOk;
    }
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const ModelFormatError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  return run(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace adderkernel::cli
