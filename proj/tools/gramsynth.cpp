// Copyright (c) 2026 The gramsynth authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface. One command per process; every command takes
// --seed, --precision {high,single}, and --trace <csv>. Exit codes:
// 0 success, 2 validation error, 3 numerical failure.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <gramsynth/config.hpp>
#include <gramsynth/csv.hpp>
#include <gramsynth/gradsuite.hpp>
#include <gramsynth/speaker.hpp>
#include <gramsynth/synthesis.hpp>
#include <gramsynth/train.hpp>
#include <gramsynth/wav.hpp>
#include <gramsynth/weights_io.hpp>

namespace gs = gramsynth;

namespace {

struct GlobalOpts {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string precision = "high";
  std::string trace;
};

void add_globals(CLI::App* sub, GlobalOpts& g) {
  sub->add_option("--seed", g.seed, "Random seed")->capture_default_str();
  sub->add_option("--precision", g.precision, "Arithmetic precision")
      ->check(CLI::IsMember({"high", "single"}))
      ->capture_default_str();
  sub->add_option("--trace", g.trace, "Write the run trace to this CSV file");
}

/// The frontend is implied by the weights: the network's input channel
/// count must match the filterbank size.
gs::FrontendConfig frontend_for(const gs::NetworkSpec& spec) {
  if (spec.input_freq == gs::FrontendConfig::toy().num_channels) return gs::FrontendConfig::toy();
  if (spec.input_freq == gs::FrontendConfig::paper().num_channels) return gs::FrontendConfig::paper();
  throw gs::ParseError("no frontend produces " + std::to_string(spec.input_freq) +
                       " channels; expected 20 (toy) or 80 (paper)");
}

/// Expands a layer list like "C0,C2" or "C0-C3" (an inclusive range in
/// network order) against the spec's layer names.
std::vector<std::string> expand_layers(const std::vector<std::string>& args,
                                       const gs::NetworkSpec& spec) {
  auto index_of = [&](const std::string& name) {
    for (size_t i = 0; i < spec.layers.size(); ++i) {
      if (spec.layers[i].name == name) return i;
    }
    throw gs::ParseError("unknown layer " + name);
  };
  std::vector<std::string> out;
  for (const auto& arg : args) {
    for (const auto& piece : gs::detail::config_list(arg)) {
      const std::size_t dash = piece.find('-');
      if (dash == std::string::npos) {
        index_of(piece);
        out.push_back(piece);
        continue;
      }
      const size_t a = index_of(piece.substr(0, dash));
      const size_t b = index_of(piece.substr(dash + 1));
      if (b < a) throw gs::ParseError("layer range " + piece + " runs backwards");
      for (size_t i = a; i <= b; ++i) out.push_back(spec.layers[i].name);
    }
  }
  return out;
}

void write_synthesis_trace(const std::string& path, const gs::SynthesisResult& r) {
  if (path.empty()) return;
  gs::CsvWriter csv(path);
  csv.header({"stage", "iter", "loss"});
  for (size_t i = 0; i < r.stage1_trace.size(); ++i) {
    csv.row({1.0, static_cast<double>(i), r.stage1_trace[i]});
  }
  for (size_t i = 0; i < r.stage2_trace.size(); ++i) {
    csv.row({2.0, static_cast<double>(i), r.stage2_trace[i]});
  }
}

void print_synthesis_summary(const gs::SynthesisResult& r) {
  std::printf("stage 1: %zu evals, stop: %s\n", r.stage1_trace.size(), r.stage1_stop.c_str());
  std::printf("griffin-lim spectral convergence: %s\n", gs::csv_number(r.sc_report).c_str());
  std::printf("stage 2: %zu evals, stop: %s\n", r.stage2_trace.size(), r.stage2_stop.c_str());
  std::printf("final loss: %s (peak gain %s)\n", gs::csv_number(r.final_loss).c_str(),
              gs::csv_number(r.peak_gain).c_str());
}

template <typename Real>
gs::Tensor<Real> features_of(const gs::Waveform& w, const gs::FrontendMatrices<Real>& mats) {
  gs::Tape<Real> tape;
  gs::Tensor<Real> samples(gs::Shape{w.length()});
  for (long i = 0; i < samples.size(); ++i) samples[i] = static_cast<Real>(w.samples[static_cast<size_t>(i)]);
  auto nodes = gs::features_from_waveform(tape, tape.constant(std::move(samples)), mats);
  return tape.value(nodes.features);
}

// ---- features --------------------------------------------------------------

template <typename Real>
int run_features(const std::string& wav_path, const std::string& out_csv,
                 const std::string& filterbank_csv, const std::string& frontend_name) {
  const gs::FrontendConfig cfg =
      frontend_name == "toy" ? gs::FrontendConfig::toy() : gs::FrontendConfig::paper();
  const gs::FrontendMatrices<Real> mats(cfg);

  if (!filterbank_csv.empty()) {
    gs::CsvWriter csv(filterbank_csv);
    std::vector<std::string> head;
    for (long c = 0; c < cfg.num_channels; ++c) head.push_back("ch" + std::to_string(c));
    csv.header(head);
    for (long b = 0; b < cfg.kept_bins; ++b) {
      std::vector<double> row(static_cast<size_t>(cfg.num_channels));
      for (long c = 0; c < cfg.num_channels; ++c) {
        row[static_cast<size_t>(c)] = static_cast<double>(mats.filterbank.at2(b, c));
      }
      csv.row(row);
    }
    std::printf("filterbank: %ld x %ld -> %s\n", cfg.kept_bins, cfg.num_channels,
                filterbank_csv.c_str());
  }

  if (!out_csv.empty()) {
    const gs::Waveform w = gs::read_wav(wav_path);
    const gs::Tensor<Real> f = features_of<Real>(w, mats);
    gs::CsvWriter csv(out_csv);
    std::vector<std::string> head = {"frame"};
    for (long c = 0; c < f.shape[1]; ++c) {
      const std::string ch = std::to_string(c);
      head.push_back("ch" + ch + "_static");
      head.push_back("ch" + ch + "_delta");
      head.push_back("ch" + ch + "_deltadelta");
    }
    csv.header(head);
    for (long t = 0; t < f.shape[0]; ++t) {
      std::vector<double> row;
      row.push_back(static_cast<double>(t));
      for (long c = 0; c < f.shape[1]; ++c) {
        for (long k = 0; k < 3; ++k) row.push_back(static_cast<double>(f.at3(t, c, k)));
      }
      csv.row(row);
    }
    std::printf("features: %ld frames x %ld channels x 3 -> %s\n", f.shape[0], f.shape[1],
                out_csv.c_str());
  }
  return 0;
}

// ---- train-toy -------------------------------------------------------------

int run_train_toy(std::uint64_t corpus_seed, long steps, int speakers, int utts,
                  const std::string& out_path, const GlobalOpts& g, long batch, double target,
                  long eval_every) {
  const gs::ToyCorpus corpus = gs::toy_corpus(speakers, utts, corpus_seed);
  const gs::NetworkSpec spec = gs::NetworkSpec::toy(static_cast<long>(corpus.charset.size()));
  const gs::FrontendConfig fcfg = gs::FrontendConfig::toy();

  gs::ToyTrainConfig cfg;
  cfg.max_steps = steps;
  cfg.batch_size = batch;
  cfg.target_error = target;
  cfg.eval_every = eval_every;
  const gs::ToyTrainResult r = gs::train_toy_network(corpus, spec, fcfg, g.seed, cfg);

  if (!g.trace.empty()) {
    gs::CsvWriter csv(g.trace);
    csv.header({"step", "loss", "error"});
    for (const auto& row : r.trace) {
      csv.row({static_cast<double>(row.step), row.loss, row.error});
    }
  }
  if (!out_path.empty()) {
    gs::ModelFile model;
    model.spec = spec;
    model.store = r.store.template cast<float>();
    model.charset = corpus.charset;
    gs::save_model(out_path, model);
    std::printf("weights -> %s\n", out_path.c_str());
  }
  std::printf("trained %ld steps on %d speakers x %d utterances\n", r.steps_run, speakers, utts);
  std::printf("greedy-decode symbol error rate: %s\n", gs::csv_number(r.final_error).c_str());
  return 0;
}

// ---- invert / texture / convert --------------------------------------------

template <typename Real>
int run_invert(const std::string& wav_path, const std::string& layer, const gs::ModelFile& model,
               bool energy_penalty, const std::string& out_path, long s1, long s2, long gl,
               const GlobalOpts& g) {
  const gs::WeightStore<Real> store = model.store.template cast<Real>();
  const gs::FrontendConfig fcfg = frontend_for(model.spec);
  gs::SynthesisJob job = gs::invert_job(gs::read_wav(wav_path), layer, model.spec, energy_penalty);
  job.seed = g.seed;
  job.stage1_iters = s1;
  job.stage2_iters = s2;
  job.griffin_lim_iters = static_cast<int>(gl);
  const gs::SynthesisResult r = gs::run_job(job, model.spec, store, fcfg);
  print_synthesis_summary(r);
  write_synthesis_trace(g.trace, r);
  gs::write_wav(out_path, r.wave);
  std::printf("audio -> %s\n", out_path.c_str());
  return 0;
}

template <typename Real>
int run_texture(const std::vector<std::string>& style_paths, const std::vector<std::string>& layer_args,
                double duration, const gs::ModelFile& model, const std::string& out_path, long s1,
                long s2, long gl, const GlobalOpts& g) {
  const gs::WeightStore<Real> store = model.store.template cast<Real>();
  const gs::FrontendConfig fcfg = frontend_for(model.spec);
  std::vector<gs::Waveform> styles;
  for (const auto& p : style_paths) styles.push_back(gs::read_wav(p));
  gs::SynthesisJob job =
      gs::texture_job(std::move(styles), expand_layers(layer_args, model.spec), duration, g.seed,
                      model.spec);
  job.stage1_iters = s1;
  job.stage2_iters = s2;
  job.griffin_lim_iters = static_cast<int>(gl);
  const gs::SynthesisResult r = gs::run_job(job, model.spec, store, fcfg);
  print_synthesis_summary(r);
  write_synthesis_trace(g.trace, r);
  gs::write_wav(out_path, r.wave);
  std::printf("audio -> %s\n", out_path.c_str());
  return 0;
}

template <typename Real>
int run_convert(const gs::RunConfig& cfg, const gs::ModelFile& model, const GlobalOpts& g) {
  const gs::WeightStore<Real> store = model.store.template cast<Real>();
  const gs::FrontendConfig fcfg = frontend_for(model.spec);
  std::vector<gs::Waveform> styles;
  for (const auto& p : cfg.style_paths) styles.push_back(gs::read_wav(p));
  gs::SynthesisJob job = gs::convert_job(gs::read_wav(cfg.content_path), std::move(styles),
                                         model.spec, cfg.loss_spec(model.spec));
  job.seed = cfg.seed;
  job.stage1_iters = cfg.stage1_iters;
  job.stage2_iters = cfg.stage2_iters;
  job.griffin_lim_iters = static_cast<int>(cfg.griffin_lim_iters);
  const gs::SynthesisResult r = gs::run_job(job, model.spec, store, fcfg);
  print_synthesis_summary(r);
  write_synthesis_trace(g.trace, r);
  gs::write_wav(cfg.output_path, r.wave);
  std::printf("audio -> %s\n", cfg.output_path.c_str());
  return 0;
}

// ---- speaker-id ------------------------------------------------------------

/// Utterances are .wav files; the speaker label is the filename up to the
/// first underscore. Files are processed in sorted order.
std::vector<std::pair<std::string, std::string>> labeled_wavs(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw gs::ParseError("'" + dir + "' is not a directory");
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".wav") continue;
    const std::string stem = entry.path().stem().string();
    out.emplace_back(entry.path().string(), stem.substr(0, stem.find('_')));
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw gs::ParseError("no .wav files in '" + dir + "'");
  return out;
}

template <typename Real>
int run_speaker_id(const std::string& train_dir, const std::string& test_dir,
                   const std::vector<std::string>& layer_args, const gs::ModelFile& model,
                   const std::string& report_csv, const std::string& mds_csv,
                   const GlobalOpts& g) {
  const gs::WeightStore<Real> store = model.store.template cast<Real>();
  const gs::FrontendMatrices<Real> mats(frontend_for(model.spec));
  const std::vector<std::string> layers = expand_layers(layer_args, model.spec);

  std::vector<std::string> label_names;
  auto label_id = [&](const std::string& name) {
    for (size_t i = 0; i < label_names.size(); ++i) {
      if (label_names[i] == name) return static_cast<int>(i);
    }
    label_names.push_back(name);
    return static_cast<int>(label_names.size()) - 1;
  };

  auto vectorize = [&](const std::string& path) {
    return gs::gram_feature_vector(features_of<Real>(gs::read_wav(path), mats), layers, model.spec,
                                   store);
  };

  const auto train_files = labeled_wavs(train_dir);
  std::vector<gs::LabeledVector> train;
  for (const auto& [path, label] : train_files) {
    train.push_back({vectorize(path), label_id(label)});
  }

  const auto test_files = labeled_wavs(test_dir);
  long correct = 0;
  std::vector<std::array<std::string, 3>> report;
  for (const auto& [path, label] : test_files) {
    const int predicted = gs::nn_classify(train, vectorize(path));
    const int truth = label_id(label);
    if (predicted == truth) ++correct;
    report.push_back({std::filesystem::path(path).stem().string(), label,
                      label_names[static_cast<size_t>(predicted)]});
  }
  const double accuracy = static_cast<double>(correct) / static_cast<double>(test_files.size());

  if (!report_csv.empty()) {
    gs::CsvWriter csv(report_csv);
    csv.header({"utterance", "true_label", "predicted_label"});
    for (const auto& r : report) csv.line({r[0], r[1], r[2]});
  }
  if (!mds_csv.empty()) {
    const long n = static_cast<long>(train.size());
    gs::Tensor<double> dist(gs::Shape{n, n}, 0.0);
    for (long i = 0; i < n; ++i) {
      for (long j = i + 1; j < n; ++j) {
        double d = 0.0;
        for (size_t k = 0; k < train[static_cast<size_t>(i)].vec.size(); ++k) {
          const double diff =
              train[static_cast<size_t>(i)].vec[k] - train[static_cast<size_t>(j)].vec[k];
          d += diff * diff;
        }
        dist.at2(i, j) = dist.at2(j, i) = std::sqrt(d);
      }
    }
    const gs::Tensor<double> coords = gs::classical_mds(dist, 2);
    gs::CsvWriter csv(mds_csv);
    csv.header({"utterance", "label", "x", "y"});
    for (long i = 0; i < n; ++i) {
      csv.line({std::filesystem::path(train_files[static_cast<size_t>(i)].first).stem().string(),
                train_files[static_cast<size_t>(i)].second, gs::csv_number(coords.at2(i, 0)),
                gs::csv_number(coords.at2(i, 1))});
    }
  }
  if (!g.trace.empty()) {
    gs::CsvWriter csv(g.trace);
    csv.header({"test_utterances", "correct", "accuracy"});
    csv.row({static_cast<double>(test_files.size()), static_cast<double>(correct), accuracy});
  }
  std::printf("%ld/%zu test utterances correct, accuracy %s\n", correct, test_files.size(),
              gs::csv_number(accuracy).c_str());
  return 0;
}

// ---- gradcheck -------------------------------------------------------------

int run_gradcheck(const GlobalOpts& g) {
  const auto cases = gs::run_gradient_suite(g.seed);
  for (const auto& c : cases) {
    std::printf("%-26s %s  max relative error %s over %ld elements\n", c.name.c_str(),
                c.passed ? "pass" : "FAIL", gs::csv_number(c.report.max_rel_err).c_str(),
                c.report.elements);
  }
  if (!g.trace.empty()) {
    gs::CsvWriter csv(g.trace);
    csv.header({"case", "max_rel_err", "elements", "passed"});
    for (const auto& c : cases) {
      csv.line({c.name, gs::csv_number(c.report.max_rel_err), gs::csv_number(c.report.elements),
                c.passed ? "1" : "0"});
    }
  }
  const bool ok = gs::gradient_suite_passed(cases);
  std::printf("gradient suite: %s\n", ok ? "PASS" : "FAIL");
  return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gramsynth: audio texture synthesis and voice conversion with Gram statistics"};
  app.require_subcommand(1);
  GlobalOpts g;

  // features
  std::string feat_wav, feat_out, feat_fb, feat_frontend = "paper";
  auto* features = app.add_subcommand("features", "Dump the feature tensor of a WAV file as CSV");
  features->add_option("wav", feat_wav, "Input WAV (PCM16 mono 16 kHz)")->required();
  features->add_option("--out", feat_out, "Feature CSV output path");
  features->add_option("--dump-filterbank", feat_fb, "Write the bins x channels filterbank matrix");
  features->add_option("--frontend", feat_frontend, "Frontend preset")
      ->check(CLI::IsMember({"toy", "paper"}))
      ->capture_default_str();
  add_globals(features, g);

  // train-toy
  std::uint64_t corpus_seed = 42;
  long steps = 5000, batch = 6, eval_every = 50;
  int speakers = 3, utts = 20;
  double target = 0.10;
  std::string train_out;
  auto* train = app.add_subcommand("train-toy", "Train the toy network on the synthetic corpus");
  train->add_option("--corpus-seed", corpus_seed, "Corpus generation seed")->capture_default_str();
  train->add_option("--steps", steps, "Adam step budget")->capture_default_str();
  train->add_option("--speakers", speakers, "Corpus speakers")->capture_default_str();
  train->add_option("--utts", utts, "Utterances per speaker")->capture_default_str();
  train->add_option("--batch", batch, "Minibatch size")->capture_default_str();
  train->add_option("--target", target, "Stop once the error rate drops below this")
      ->capture_default_str();
  train->add_option("--eval-every", eval_every, "Steps between error-rate evaluations")
      ->capture_default_str();
  train->add_option("--out", train_out, "Weight file to write (MGW1)");
  add_globals(train, g);

  // invert
  std::string inv_wav, inv_layer = "C0", inv_weights, inv_out = "inverted.wav";
  bool inv_no_energy = false;
  long inv_s1 = 1000, inv_s2 = 1000, inv_gl = 100;
  auto* invert = app.add_subcommand("invert", "Reconstruct audio from one layer's activations");
  invert->add_option("wav", inv_wav, "Utterance whose activations to invert")->required();
  invert->add_option("--layer", inv_layer, "Network layer to match")->capture_default_str();
  invert->add_option("--weights", inv_weights, "Weight file (MGW1)")->required();
  invert->add_option("--out", inv_out, "Output WAV")->capture_default_str();
  invert->add_flag("--no-energy-penalty", inv_no_energy, "Drop the frame-energy penalty");
  invert->add_option("--stage1-iters", inv_s1, "Spectrogram L-BFGS budget")->capture_default_str();
  invert->add_option("--stage2-iters", inv_s2, "Waveform L-BFGS budget")->capture_default_str();
  invert->add_option("--gl-iters", inv_gl, "Griffin-Lim iterations")->capture_default_str();
  add_globals(invert, g);

  // texture
  std::vector<std::string> tex_styles, tex_layers;
  std::string tex_weights, tex_out = "texture.wav";
  double tex_duration = 2.0;
  long tex_s1 = 1000, tex_s2 = 1000, tex_gl = 100;
  auto* texture = app.add_subcommand("texture", "Synthesize audio matching style Gram statistics");
  texture->add_option("--style", tex_styles, "Style WAV files")->required()->expected(-1);
  texture->add_option("--layers", tex_layers,
                      "Style layers, comma lists or ranges like C0-C5 (default: first six convs)");
  texture->add_option("--duration", tex_duration, "Output length in seconds")->capture_default_str();
  texture->add_option("--weights", tex_weights, "Weight file (MGW1)")->required();
  texture->add_option("--out", tex_out, "Output WAV")->capture_default_str();
  texture->add_option("--stage1-iters", tex_s1, "Spectrogram L-BFGS budget")->capture_default_str();
  texture->add_option("--stage2-iters", tex_s2, "Waveform L-BFGS budget")->capture_default_str();
  texture->add_option("--gl-iters", tex_gl, "Griffin-Lim iterations")->capture_default_str();
  add_globals(texture, g);

  // convert
  std::string conv_content, conv_weights, conv_out, conv_config;
  std::vector<std::string> conv_styles;
  auto* convert = app.add_subcommand("convert", "Voice conversion: content utterance, style speaker");
  convert->add_option("--content", conv_content, "Content WAV");
  convert->add_option("--style", conv_styles, "Style WAV files")->expected(-1);
  convert->add_option("--weights", conv_weights, "Weight file (MGW1)");
  convert->add_option("--out", conv_out, "Output WAV");
  convert->add_option("--config", conv_config,
                      "Run configuration file; command-line flags override it");
  add_globals(convert, g);

  // speaker-id
  std::string sid_train, sid_test, sid_weights, sid_report, sid_mds;
  std::vector<std::string> sid_layers;
  auto* speaker = app.add_subcommand(
      "speaker-id", "1-NN speaker classification on Gram features (label = filename up to '_')");
  speaker->add_option("--train-dir", sid_train, "Directory of reference WAV files")->required();
  speaker->add_option("--test-dir", sid_test, "Directory of WAV files to classify")->required();
  speaker->add_option("--layers", sid_layers,
                      "Gram layers, e.g. C0-C3 (default: raw feature Gram baseline)");
  speaker->add_option("--weights", sid_weights, "Weight file (MGW1)")->required();
  speaker->add_option("--report", sid_report, "Per-utterance prediction CSV");
  speaker->add_option("--mds", sid_mds, "2-D MDS coordinates CSV for the reference set");
  add_globals(speaker, g);

  // gradcheck
  auto* gradcheck =
      app.add_subcommand("gradcheck", "Run the finite-difference gradient suite; nonzero on failure");
  add_globals(gradcheck, g);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  g.seed_given = app.get_subcommand()->count("--seed") > 0;
  const bool single = g.precision == "single";

  try {
    if (*features) {
      if (feat_out.empty() && feat_fb.empty()) {
        throw gs::ParseError("features: need --out and/or --dump-filterbank");
      }
      return single ? run_features<float>(feat_wav, feat_out, feat_fb, feat_frontend)
                    : run_features<double>(feat_wav, feat_out, feat_fb, feat_frontend);
    }
    if (*train) {
      return run_train_toy(corpus_seed, steps, speakers, utts, train_out, g, batch, target,
                           eval_every);
    }
    if (*invert) {
      const gs::ModelFile model = gs::load_model(inv_weights);
      return single ? run_invert<float>(inv_wav, inv_layer, model, !inv_no_energy, inv_out, inv_s1,
                                        inv_s2, inv_gl, g)
                    : run_invert<double>(inv_wav, inv_layer, model, !inv_no_energy, inv_out, inv_s1,
                                         inv_s2, inv_gl, g);
    }
    if (*texture) {
      const gs::ModelFile model = gs::load_model(tex_weights);
      return single ? run_texture<float>(tex_styles, tex_layers, tex_duration, model, tex_out,
                                         tex_s1, tex_s2, tex_gl, g)
                    : run_texture<double>(tex_styles, tex_layers, tex_duration, model, tex_out,
                                          tex_s1, tex_s2, tex_gl, g);
    }
    if (*convert) {
      gs::RunConfig cfg;
      if (!conv_config.empty()) cfg = gs::RunConfig::from_file(conv_config);
      if (!conv_content.empty()) cfg.content_path = conv_content;
      if (!conv_styles.empty()) cfg.style_paths = conv_styles;
      if (!conv_weights.empty()) cfg.weights_path = conv_weights;
      if (!conv_out.empty()) cfg.output_path = conv_out;
      if (g.seed_given) cfg.seed = g.seed;
      if (convert->count("--precision") > 0) {
        cfg.precision = gs::precision_from(g.precision);
      }
      if (cfg.content_path.empty()) throw gs::ParseError("convert: no content utterance given");
      if (cfg.style_paths.empty()) throw gs::ParseError("convert: no style utterances given");
      if (cfg.weights_path.empty()) throw gs::ParseError("convert: no weight file given");
      if (cfg.output_path.empty()) throw gs::ParseError("convert: no output path given");
      const gs::ModelFile model = gs::load_model(cfg.weights_path);
      return cfg.precision == gs::Precision::Single ? run_convert<float>(cfg, model, g)
                                                    : run_convert<double>(cfg, model, g);
    }
    if (*speaker) {
      const gs::ModelFile model = gs::load_model(sid_weights);
      return single ? run_speaker_id<float>(sid_train, sid_test, sid_layers, model, sid_report,
                                            sid_mds, g)
                    : run_speaker_id<double>(sid_train, sid_test, sid_layers, model, sid_report,
                                             sid_mds, g);
    }
    if (*gradcheck) return run_gradcheck(g);
  } catch (const gs::NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const gs::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const gs::ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "failure: %s\n", e.what());
    return 3;
  }
  return 2;
}
