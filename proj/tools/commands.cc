// Copyright 2026 The twoway Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "commands.h"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "twoway/checkpoint.h"
#include "twoway/config.h"
#include "twoway/decoding.h"
#include "twoway/gradcheck.h"
#include "twoway/grid.h"
#include "twoway/parallel.h"
#include "twoway/text.h"
#include "twoway/training.h"

namespace twoway::cli {

namespace fs = std::filesystem;

namespace {

void ApplyOverrides(RunConfig& config, const std::vector<std::string>& overrides) {
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value");
    config.Set(kv.substr(0, eq), kv.substr(eq + 1));
  }
}

void RequireFile(const std::string& path, const char* what) {
  if (path.empty()) throw DataError(std::string(what) + " path is not set");
  if (!fs::is_regular_file(path)) throw DataError(std::string(what) + " not found: " + path);
}

std::vector<Example> ToExamples(const ParallelCorpus& corpus, const Vocabulary& src_vocab,
                                const Vocabulary& tgt_vocab, std::size_t max_seq_len,
                                std::size_t* dropped) {
  std::vector<Example> out;
  for (std::size_t k = 0; k < corpus.size(); ++k) {
    if (corpus.src[k].size() + 1 > max_seq_len || corpus.tgt[k].size() + 1 > max_seq_len) {
      if (dropped) ++*dropped;
      continue;
    }
    out.push_back({src_vocab.Encode(corpus.src[k]), tgt_vocab.Encode(corpus.tgt[k])});
  }
  return out;
}

struct TrainArgs {
  std::string config_path, resume;
  std::vector<std::string> overrides;
};

int Train(const TrainArgs& args, std::ostream& out) {
  RunConfig config = LoadConfig(args.config_path);
  ApplyOverrides(config, args.overrides);
  config.Validate();
  if (config.precision != "float32") {
    throw ConfigError("training runs in float32; float64 is used by gradcheck only");
  }
  SetNumWorkers(config.workers);
  RequireFile(config.train_src, "train_src");
  RequireFile(config.train_tgt, "train_tgt");
  RequireFile(config.dev_src, "dev_src");
  RequireFile(config.dev_tgt, "dev_tgt");
  ParallelCorpus train = LoadCorpus(config.train_src, config.train_tgt);
  ParallelCorpus dev = LoadCorpus(config.dev_src, config.dev_tgt);
  if (train.size() == 0) throw DataError("no usable training pairs in " + config.train_src);

  fs::create_directories(config.output_dir);
  const fs::path dir = config.output_dir;
  Vocabulary src_vocab, tgt_vocab;
  if (!args.resume.empty()) {
    const fs::path ckpt_dir = fs::path(args.resume).parent_path();
    src_vocab = Vocabulary::Load((ckpt_dir / "src.vocab").string());
    tgt_vocab = Vocabulary::Load((ckpt_dir / "tgt.vocab").string());
  } else {
    src_vocab = Vocabulary::Build(train.src, config.src_vocab_size);
    tgt_vocab = Vocabulary::Build(train.tgt, config.tgt_vocab_size);
  }
  src_vocab.Save((dir / "src.vocab").string());
  tgt_vocab.Save((dir / "tgt.vocab").string());

  std::size_t dropped = 0;
  auto train_ex = ToExamples(train, src_vocab, tgt_vocab, config.max_seq_len, &dropped);
  auto dev_ex = ToExamples(dev, src_vocab, tgt_vocab, config.max_seq_len, nullptr);
  if (train_ex.empty()) throw DataError("every training pair exceeds max_seq_len");
  if (dev_ex.empty()) throw DataError("no usable dev pairs in " + config.dev_src);

  Trainer trainer(config, config.Model(src_vocab.size(), tgt_vocab.size()), std::move(train_ex),
                  std::move(dev_ex));
  if (!args.resume.empty()) trainer.Load(args.resume);
  out << "train: " << trainer.batches_per_epoch() << " batches/epoch, " << dropped
      << " pairs over max_seq_len dropped, starting at step " << trainer.step() << "\n";

  const fs::path log_path = dir / "train_log.csv";
  const bool fresh = args.resume.empty() || !fs::exists(log_path);
  std::ofstream log(log_path, fresh ? std::ios::trunc : std::ios::app);
  if (!log) throw DataError("cannot write " + log_path.string());
  if (fresh) log << LogCsvHeader() << "\n";
  trainer.Run(&log, (dir / "model.ckpt").string());
  out << "train: finished at step " << trainer.step() << ", lr " << trainer.lr()
      << ", checkpoint " << (dir / "model.ckpt").string() << "\n";
  return kOk;
}

struct DecodeArgs {
  std::string checkpoint, input, output, direction = "fwd", scores;
  std::size_t beam = 0;
  double alpha = -1;
  std::vector<std::string> overrides;
};

int Decode(const DecodeArgs& args, std::ostream& out) {
  CheckpointData data = ReadCheckpoint(args.checkpoint);
  RunConfig config = ParseConfig(data.config_text);
  ApplyOverrides(config, args.overrides);
  if (args.beam) config.beam = args.beam;
  if (args.alpha >= 0) config.alpha = args.alpha;
  config.Validate();
  SetNumWorkers(config.workers);
  const ModelConfig model = config.Model(data.src_vocab, data.tgt_vocab);
  auto params = LoadParams(data, model);

  const fs::path dir = fs::path(args.checkpoint).parent_path();
  Vocabulary src_vocab = Vocabulary::Load((dir / "src.vocab").string());
  Vocabulary tgt_vocab = Vocabulary::Load((dir / "tgt.vocab").string());
  if (src_vocab.size() != data.src_vocab || tgt_vocab.size() != data.tgt_vocab) {
    throw DigestError("vocabulary files next to the checkpoint do not match its digest");
  }
  const Direction direction = args.direction == "bwd" ? Direction::kBackward
                                                      : Direction::kForward;
  const Vocabulary& in_vocab = direction == Direction::kForward ? src_vocab : tgt_vocab;
  const Vocabulary& out_vocab = direction == Direction::kForward ? tgt_vocab : src_vocab;

  RequireFile(args.input, "input");
  auto lines = LoadSentences(args.input);
  std::ofstream output(args.output);
  if (!output) throw DataError("cannot write " + args.output);
  std::ofstream scores;
  if (!args.scores.empty()) {
    scores.open(args.scores);
    if (!scores) throw DataError("cannot write " + args.scores);
  }
  BeamConfig beam{config.beam, 0, config.alpha};
  for (std::size_t k = 0; k < lines.size(); ++k) {
    if (lines[k].empty()) {
      output << "\n";
      if (scores.is_open()) scores << k << "\t\n";
      continue;
    }
    const auto ids = in_vocab.Encode(lines[k]);
    beam.max_len = config.max_len_factor * ids.size() + config.max_len_offset;
    const auto result = decode(params, ids, direction, beam);
    output << JoinTokens(out_vocab.Decode(result.tokens)) << "\n";
    if (scores.is_open()) scores << k << "\t" << std::setprecision(9) << result.score << "\n";
  }
  out << "decode: " << lines.size() << " lines (" << DirectionName(direction) << ", beam "
      << config.beam << ") -> " << args.output << "\n";
  return kOk;
}

int GradCheck(const std::string& config_path, const std::string& corrupt_group,
              std::ostream& out) {
  GradCheckOptions options;
  if (!config_path.empty()) {
    RunConfig config = LoadConfig(config_path);
    config.Validate();
    const ModelConfig tiny = GradCheckOptions::TinyModel();
    options.model = config.Model(tiny.src_vocab, tiny.tgt_vocab);
    options.l2 = config.l2_2dlstm;
    options.seed = config.seed;
  }
  if (!corrupt_group.empty()) {
    const auto groups = GradCheckGroups();
    if (std::find(groups.begin(), groups.end(), corrupt_group) == groups.end()) {
      throw ConfigError("unknown parameter group '" + corrupt_group + "'");
    }
    const std::size_t d_cell = options.model.d_cell;
    options.corrupt = [corrupt_group, d_cell](const std::string& name, std::span<double> grad) {
      for (std::size_t e = 0; e < grad.size(); ++e) {
        if (ParameterGroup(name, e, d_cell) == corrupt_group) grad[e] = grad[e] * 1.5 + 1e-3;
      }
    };
  }
  const auto report = RunGradCheck(options);
  out << std::left << std::setw(16) << "group" << std::setw(10) << "checked"
      << "worst_rel_error  at\n";
  for (const auto& g : report.groups) {
    out << std::setw(16) << g.group << std::setw(10) << g.checked << std::setw(17)
        << std::scientific << std::setprecision(3) << g.worst << std::defaultfloat
        << g.worst_at << "\n";
  }
  out << "worst " << std::scientific << report.worst << std::defaultfloat << " ("
      << (report.passed ? "pass" : "FAIL") << ", " << std::fixed << std::setprecision(1)
      << report.seconds << " s)\n"
      << std::defaultfloat;
  return report.passed ? kOk : kCheckFailed;
}

struct BenchArgs {
  std::vector<std::size_t> sizes{1, 8, 16, 32};
  std::vector<std::string> schedules{"naive", "diagonal", "row", "column"};
  std::size_t d_cell = 32, d_model = 32, repeats = 3, workers = 1;
  std::uint64_t seed = 1;
  std::string output;
};

int Bench(const BenchArgs& args, std::ostream& out) {
  SetNumWorkers(args.workers);
  std::ofstream file;
  if (!args.output.empty()) {
    file.open(args.output);
    if (!file) throw DataError("cannot write " + args.output);
  }
  std::ostream& csv = args.output.empty() ? out : file;
  csv << BenchCsvHeader() << "\n";
  bool ok = true;
  for (std::size_t n : args.sizes) {
    for (const auto& name : args.schedules) {
      Schedule schedule;
      if (name == "naive") schedule = Schedule::kNaive;
      else if (name == "diagonal") schedule = Schedule::kDiagonal;
      else if (name == "row") schedule = Schedule::kRow;
      else if (name == "column") schedule = Schedule::kColumn;
      else throw ConfigError("unknown schedule '" + name + "'");
      const auto row = BenchSchedule(schedule, n, n, args.d_cell, args.d_model, args.repeats,
                                     args.seed);
      csv << ToCsv(row) << "\n";
      if (schedule == Schedule::kDiagonal && row.phases != 2 * n - 1) ok = false;
    }
  }
  if (!ok) {
    out << "bench: diagonal phase count differs from I+J-1\n";
    return kCheckFailed;
  }
  return kOk;
}

int EvalBleu(const std::string& hyp, const std::string& ref, bool undo, std::ostream& out) {
  RequireFile(hyp, "hypothesis file");
  RequireFile(ref, "reference file");
  auto hyps = LoadSentences(hyp);
  auto refs = LoadSentences(ref);
  if (undo) {
    for (auto& h : hyps) h = SplitWhitespace(undo_bpe(h));
    for (auto& r : refs) r = SplitWhitespace(undo_bpe(r));
  }
  if (hyps.size() != refs.size()) {
    throw DataError("hypothesis and reference line counts differ (" +
                    std::to_string(hyps.size()) + " vs " + std::to_string(refs.size()) + ")");
  }
  const auto stats = bleu_stats(hyps, refs);
  out << "BLEU = " << std::fixed << std::setprecision(2) << stats.score;
  for (std::size_t n = 0; n < stats.matches.size(); ++n) {
    out << (n ? "/" : " ")
        << (stats.totals[n] ? 100.0 * double(stats.matches[n]) / double(stats.totals[n]) : 0.0);
  }
  out << " (BP=" << std::setprecision(3) << stats.brevity_penalty << ", hyp_len=" << stats.hyp_len
      << ", ref_len=" << stats.ref_len << ")\n"
      << std::defaultfloat;
  return kOk;
}

struct MakeDataArgs {
  std::string task = "reverse", out_src, out_tgt;
  SyntheticSpec spec;
};

int MakeData(const MakeDataArgs& args, std::ostream& out) {
  SyntheticSpec spec = args.spec;
  spec.task = ParseSyntheticTask(args.task);
  auto corpus = gen_synthetic(spec);
  SaveSentences(corpus.src, args.out_src);
  SaveSentences(corpus.tgt, args.out_tgt);
  out << "make-data: " << corpus.size() << " " << args.task << " pairs -> " << args.out_src
      << ", " << args.out_tgt << "\n";
  return kOk;
}

std::vector<std::string> ReadLines(const std::string& path) {
  RequireFile(path, "input");
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

int LearnBpe(const std::string& input, std::size_t merges, const std::string& output,
             std::ostream& out) {
  auto model = learn_bpe(ReadLines(input), merges);
  SaveBpe(model, output);
  out << "learn-bpe: " << model.merge_count() << " merges -> " << output << "\n";
  return kOk;
}

int ApplyBpe(const std::string& model_path, const std::string& input, const std::string& output,
             bool undo, std::ostream& out) {
  auto lines = ReadLines(input);
  std::ofstream file(output);
  if (!file) throw DataError("cannot write " + output);
  if (undo) {
    for (const auto& line : lines) file << undo_bpe(SplitWhitespace(line)) << "\n";
  } else {
    RequireFile(model_path, "BPE model");
    const auto model = LoadBpe(model_path);
    for (const auto& line : lines) file << JoinTokens(apply_bpe(model, line)) << "\n";
  }
  out << (undo ? "undo-bpe: " : "apply-bpe: ") << lines.size() << " lines -> " << output << "\n";
  return kOk;
}

}  // namespace

int Run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-way translation with a 2D LSTM grid"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  train_cmd->add_option("-c,--config", train.config_path, "Config file")->required();
  train_cmd->add_option("--resume", train.resume, "Checkpoint to resume from");
  train_cmd->add_option("--set", train.overrides, "key=value overrides");

  DecodeArgs decode_args;
  auto* decode_cmd = app.add_subcommand("decode", "Beam-search decode a file");
  decode_cmd->add_option("--checkpoint", decode_args.checkpoint, "Checkpoint")->required();
  decode_cmd->add_option("-i,--input", decode_args.input, "Input file")->required();
  decode_cmd->add_option("-o,--output", decode_args.output, "Output file")->required();
  decode_cmd->add_option("--direction", decode_args.direction, "fwd or bwd")
      ->check(CLI::IsMember({"fwd", "bwd"}));
  decode_cmd->add_option("--beam", decode_args.beam, "Beam size override");
  decode_cmd->add_option("--alpha", decode_args.alpha, "Length-normalization exponent");
  decode_cmd->add_option("--scores", decode_args.scores, "Per-line score TSV");
  decode_cmd->add_option("--set", decode_args.overrides, "key=value overrides");

  std::string gc_config, gc_corrupt;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  gc_cmd->add_option("-c,--config", gc_config, "Config file with model sizes");
  gc_cmd->add_option("--corrupt-group", gc_corrupt,
                     "Perturb one group's analytic gradient (detector check)");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Time grid schedules, CSV output");
  bench_cmd->add_option("--sizes", bench.sizes, "Grid sizes J = I")->delimiter(',');
  bench_cmd->add_option("--schedules", bench.schedules, "naive,diagonal,row,column")
      ->delimiter(',');
  bench_cmd->add_option("--d-cell", bench.d_cell);
  bench_cmd->add_option("--d-model", bench.d_model);
  bench_cmd->add_option("--repeats", bench.repeats);
  bench_cmd->add_option("--workers", bench.workers);
  bench_cmd->add_option("--seed", bench.seed);
  bench_cmd->add_option("-o,--output", bench.output, "CSV file (default stdout)");

  std::string hyp, ref;
  bool bleu_undo = false;
  auto* bleu_cmd = app.add_subcommand("eval-bleu", "Corpus BLEU-4");
  bleu_cmd->add_option("--hyp", hyp)->required();
  bleu_cmd->add_option("--ref", ref)->required();
  bleu_cmd->add_flag("--undo-bpe", bleu_undo, "Join subwords before scoring");

  MakeDataArgs make;
  auto* make_cmd = app.add_subcommand("make-data", "Generate a synthetic parallel corpus");
  make_cmd->add_option("--task", make.task, "copy, reverse, shift-cipher or sort");
  make_cmd->add_option("--count", make.spec.count);
  make_cmd->add_option("--min-len", make.spec.min_len);
  make_cmd->add_option("--max-len", make.spec.max_len);
  make_cmd->add_option("--vocab", make.spec.vocab);
  make_cmd->add_option("--shift", make.spec.shift);
  make_cmd->add_option("--seed", make.spec.seed);
  make_cmd->add_option("--out-src", make.out_src)->required();
  make_cmd->add_option("--out-tgt", make.out_tgt)->required();

  std::string bpe_input, bpe_output, bpe_model;
  std::size_t merges = 200;
  bool bpe_undo = false;
  auto* learn_cmd = app.add_subcommand("learn-bpe", "Learn BPE merges");
  learn_cmd->add_option("-i,--input", bpe_input)->required();
  learn_cmd->add_option("--merges", merges);
  learn_cmd->add_option("-o,--output", bpe_output)->required();
  auto* apply_cmd = app.add_subcommand("apply-bpe", "Apply or undo BPE");
  apply_cmd->add_option("--model", bpe_model);
  apply_cmd->add_option("-i,--input", bpe_input)->required();
  apply_cmd->add_option("-o,--output", bpe_output)->required();
  apply_cmd->add_flag("--undo", bpe_undo);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*train_cmd) return Train(train, out);
    if (*decode_cmd) return Decode(decode_args, out);
    if (*gc_cmd) return GradCheck(gc_config, gc_corrupt, out);
    if (*bench_cmd) return Bench(bench, out);
    if (*bleu_cmd) return EvalBleu(hyp, ref, bleu_undo, out);
    if (*make_cmd) return MakeData(make, out);
    if (*learn_cmd) return LearnBpe(bpe_input, merges, bpe_output, out);
    if (*apply_cmd) return ApplyBpe(bpe_model, bpe_input, bpe_output, bpe_undo, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumericError;
  } catch (const DigestError& e) {
    err << "digest mismatch: " << e.what() << "\n";
    return kDigestMismatch;
  } catch (const DomainError& e) {
    err << "invalid argument: " << e.what() << "\n";
    return kConfigError;
  } catch (const PreconditionError& e) {
    err << "invalid argument: " << e.what() << "\n";
    return kConfigError;
  }
  return kConfigError;
}

}  // namespace twoway::cli
