#include "gres/cli.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "gres/config.hpp"
#include "gres/data.hpp"
#include "gres/errors.hpp"
#include "gres/eval.hpp"
#include "gres/gradcheck.hpp"
#include "gres/trainer.hpp"

namespace gres::cli {

namespace {

RunConfig resolve_config(const std::string& config_file) {
  RunConfig base = default_run_config();
  return config_file.empty() ? base : load_run_config(config_file, base);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write " + path);
  f << text;
  if (!f) throw FormatError("failed writing " + path);
}

std::vector<std::size_t> parse_count_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    long v = 0;
    try {
      v = std::stol(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || v <= 0) throw ArgumentError("bad count '" + item + "' in list '" + s + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw ArgumentError("empty count list");
  return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Generalized 3D referring expression segmentation: data, training, evaluation"};
  app.require_subcommand(1);

  std::string config_file;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset directory");
  std::string gen_out;
  std::uint64_t gen_seed = 0;
  std::size_t gen_scenes = 0, gen_samples = 0;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Generator seed")->required();
  gen->add_option("--scenes", gen_scenes, "Number of scenes (overrides config)");
  gen->add_option("--samples", gen_samples, "Expressions per scene (overrides config)");
  gen->add_option("--config", config_file, "Run config JSON");

  // train
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  std::string train_data, train_out;
  std::size_t train_steps = 0;
  std::uint64_t train_seed = 0;
  std::size_t train_batch = 0;
  std::size_t log_every = 0;
  train->add_option("--data", train_data, "Dataset directory")->required();
  train->add_option("--out", train_out, "Checkpoint path")->required();
  train->add_option("--steps", train_steps, "Optimizer steps")->required();
  train->add_option("--seed", train_seed, "Training seed")->required();
  train->add_option("--config", config_file, "Run config JSON");
  train->add_option("--batch", train_batch, "Batch size (overrides config)");
  train->add_option("--log-every", log_every, "Print the loss every N steps (0: quiet)");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  std::string eval_data, eval_ckpt, eval_split = "val", eval_report;
  ev->add_option("--data", eval_data, "Dataset directory")->required();
  ev->add_option("--ckpt", eval_ckpt, "Checkpoint path")->required();
  ev->add_option("--split", eval_split, "Split to score")->check(CLI::IsMember({"train", "val"}));
  ev->add_option("--report", eval_report, "Report JSON path (stdout when omitted)");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every parameter on a tiny config");
  std::uint64_t gc_seed = 0;
  double gc_step = 1e-5;
  double gc_tol = 1e-4;
  gc->add_option("--seed", gc_seed, "Problem seed")->required();
  gc->add_option("--step", gc_step, "Central-difference step");
  gc->add_option("--tol", gc_tol, "Maximum accepted relative error");

  // stats
  auto* st = app.add_subcommand("stats", "Seed coverage / repetition rates as CSV");
  std::string stats_data, stats_list = "32,64,128", stats_out;
  st->add_option("--data", stats_data, "Dataset directory")->required();
  st->add_option("--nseed-list", stats_list, "Comma-separated seed counts");
  st->add_option("--out", stats_out, "CSV path (stdout when omitted)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    // --help arrives here too, with exit code 0.
    return app.exit(e, out, err) == 0 ? kOk : kUsageError;
  }

  try {
    if (gen->parsed()) {
      RunConfig rc = resolve_config(config_file);
      rc.gen.seed = gen_seed;
      if (gen_scenes) rc.gen.num_scenes = gen_scenes;
      if (gen_samples) rc.gen.samples_per_scene = gen_samples;
      const DatasetManifest m = generate_dataset(rc.gen);
      write_dataset(m, gen_out);
      out << "wrote " << m.scenes.size() << " scenes and " << m.samples.size() << " samples to " << gen_out << "\n";
    } else if (train->parsed()) {
      RunConfig rc = resolve_config(config_file);
      rc.train.total_steps = train_steps;
      rc.train.seed = train_seed;
      if (train_batch) rc.train.batch_size = train_batch;
      const DatasetManifest data = read_dataset(train_data);
      FitOptions opts;
      if (log_every) {
        opts.on_step = [&](std::size_t step, const StepResult& r) {
          if (step % log_every == 0 || step + 1 == rc.train.total_steps)
            out << "step " << step << " loss " << r.loss << " lr " << r.lr << "\n";
        };
      }
      const Checkpoint ckpt = fit(data, rc.model, rc.train, opts);
      save_checkpoint(ckpt, train_out);
      out << "trained " << ckpt.step << " steps, checkpoint " << train_out << "\n";
    } else if (ev->parsed()) {
      const DatasetManifest data = read_dataset(eval_data);
      const Checkpoint ckpt = load_checkpoint(eval_ckpt);
      const EvalReport report = evaluate_dataset(data, ckpt.params, ckpt.model, eval_split == "train");
      const std::string text = to_json(report).dump(2) + "\n";
      if (eval_report.empty()) {
        out << text;
      } else {
        write_text(eval_report, text);
        out << "miou " << report.miou << " acc_025 " << report.acc_025 << " acc_05 " << report.acc_05 << "\n";
      }
    } else if (gc->parsed()) {
      TinyProblem problem = make_tiny_problem(gc_seed);
      const auto r = check_model_gradients(problem, LossWeights{}, gc_step);
      out << "coordinates " << r.coordinates << "\nmax_relative_error " << r.max_rel_error << "\n";
      if (!(r.max_rel_error < gc_tol)) {
        err << "gradient check failed: " << r.max_rel_error << " >= " << gc_tol << "\n";
        return kNumericalError;
      }
    } else if (st->parsed()) {
      const auto counts = parse_count_list(stats_list);
      const DatasetManifest data = read_dataset(stats_data);
      std::ostringstream csv;
      csv << "n_seed,coverage_rate,repetition_rate,scenes\n";
      for (std::size_t n : counts) {
        double cr = 0.0, rr = 0.0;
        std::size_t used = 0;
        for (const SceneCloud& scene : data.scenes) {
          if (scene.num_instances() == 0) continue;
          const auto seeds = fss(superpoint_centroids(scene), std::min(n, scene.num_superpoints));
          const auto s = coverage_repetition_rates(seeds, scene);
          cr += s.coverage_rate;
          rr += s.repetition_rate;
          ++used;
        }
        if (used == 0) throw DataError("no scene with instances in " + stats_data);
        csv << n << "," << cr / static_cast<double>(used) << "," << rr / static_cast<double>(used) << "," << used
            << "\n";
      }
      if (stats_out.empty()) {
        out << csv.str();
      } else {
        write_text(stats_out, csv.str());
      }
    }
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const GenerationError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const StructuralError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const TrainingError& e) {
    err << "error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const ComputationError& e) {
    err << "error: " << e.what() << "\n";
    return kNumericalError;
  }
  return kOk;
}

}  // namespace gres::cli
