// trajvid: dataset synthesis, training, generation, evaluation and the job
// service from one binary.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "trajvid/bench.hpp"
#include "trajvid/checkpoint.hpp"
#include "trajvid/metrics.hpp"
#include "trajvid/train.hpp"
#include "trajvid/service.hpp"

#include <CLI11.hpp>

namespace fs = std::filesystem;
using namespace trajvid;

namespace {

struct AttentionFlags {
  std::string mode = "weighted";
  double w = kDefaultAttentionW;
  CLI::Option* mode_opt = nullptr;
  CLI::Option* w_opt = nullptr;

  void add(CLI::App* app) {
    mode_opt = app->add_option("--attention-mode", mode, "weighted | full | hard")
                   ->check(CLI::IsMember({"weighted", "full", "hard"}));
    w_opt = app->add_option("--attention-w", w, "bias weight w (log w is added to in-region logits)")
                ->check(CLI::PositiveNumber);
  }

  // Explicit flags override what the checkpoint carries.
  void apply(ModelConfig& c) const {
    if (mode_opt->count()) c.attention_mode = attention_mode_from_string(mode);
    if (w_opt->count()) c.attention_w = w;
  }
};

Model<float> load_or_init(const std::string& checkpoint, const LatentGrid& grid, const AttentionFlags& af) {
  Model<float> m;
  if (!checkpoint.empty()) {
    m = load_checkpoint(checkpoint).model;
  } else {
    ModelConfig c;
    c.grid = grid;
    m = Model<float>(c);
    m.init(0);
    std::cerr << "note: no checkpoint given, using an untrained model\n";
  }
  ModelConfig c = m.config();
  af.apply(c);
  Model<float> out(c);
  out.params() = m.params();
  return out;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_frames(const fs::path& dir, const std::vector<Image>& frames) {
  fs::create_directories(dir);
  for (std::size_t f = 0; f < frames.size(); ++f) write_png(dir / frame_filename(static_cast<int>(f)), frames[f]);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trajectory-controlled toy video generation"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  DatasetOptions dopt;
  std::string synth_out;
  bool swap = false;
  synth->add_option("--n", dopt.n, "number of candidate clips")->required()->check(CLI::PositiveNumber);
  synth->add_option("--seed", dopt.seed, "dataset seed")->required();
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--motion-threshold", dopt.motion_threshold, "minimum mean per-frame displacement");
  synth->add_flag("--overlay", dopt.write_overlay, "also write trajectory overlay frames");
  synth->add_flag("--swap-benchmark", swap, "write two-object swap cases instead");

  // train
  auto* train_cmd = app.add_subcommand("train", "train from a JSON config");
  std::string train_cfg;
  AttentionFlags train_af;
  train_cmd->add_option("--config", train_cfg, "training config (JSON)")->required()->check(CLI::ExistingFile);
  train_af.add(train_cmd);

  // generate
  auto* gen = app.add_subcommand("generate", "sample a video for a triplet");
  std::string gen_triplet, gen_first, gen_out, gen_ckpt, gen_assets;
  int gen_steps = 10;
  std::uint64_t gen_seed = 0;
  AttentionFlags gen_af;
  gen->add_option("--triplet", gen_triplet, "triplet JSON")->required()->check(CLI::ExistingFile);
  gen->add_option("--first-frame", gen_first, "first frame PNG")->required()->check(CLI::ExistingFile);
  gen->add_option("--steps", gen_steps, "Euler steps")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "noise seed");
  gen->add_option("--out", gen_out, "output directory for frames")->required();
  gen->add_option("--checkpoint", gen_ckpt, "model checkpoint")->check(CLI::ExistingFile);
  gen->add_option("--assets", gen_assets, "directory that reference image_ref paths are relative to");
  gen_af.add(gen);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a benchmark directory");
  std::string ev_ckpt, ev_bench, ev_out;
  EvalOptions eopt;
  AttentionFlags ev_af;
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->check(CLI::ExistingFile);
  ev->add_option("--benchmark", ev_bench, "benchmark directory (dataset layout)")->required();
  ev->add_option("--out", ev_out, "report JSON path")->required();
  ev->add_option("--steps", eopt.steps, "Euler steps")->check(CLI::PositiveNumber);
  ev->add_option("--seed", eopt.seed, "noise seed");
  ev->add_flag("--bypass-sampling", eopt.bypass_sampling, "score the stored frames (tracker self-test)");
  ev->add_flag("--assignment", eopt.assignment, "also score caption-trajectory assignment");
  ev_af.add(ev);

  // serve
  auto* srv_cmd = app.add_subcommand("serve", "run the HTTP job service");
  int port = 8080;
  std::string host = "127.0.0.1", srv_ckpt, data_dir = "canvas_data";
  ServiceConfig scfg;
  AttentionFlags srv_af;
  srv_cmd->add_option("--port", port, "listen port");
  srv_cmd->add_option("--host", host, "listen address");
  srv_cmd->add_option("--checkpoint", srv_ckpt, "model checkpoint")->check(CLI::ExistingFile);
  srv_cmd->add_option("--data-dir", data_dir, "store root (CANVAS_DATA_DIR overrides)");
  srv_cmd->add_option("--workers", scfg.workers, "generation workers")->check(CLI::PositiveNumber);
  srv_af.add(srv_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      if (swap) {
        const auto m = make_swap_benchmark(synth_out, dopt.n, dopt.seed);
        std::cout << "wrote " << m.clips.size() << " swap cases to " << synth_out << "\n";
      } else {
        const auto m = make_dataset(synth_out, dopt);
        std::cout << "wrote " << m.clips.size() << " of " << dopt.n << " clips to " << synth_out << "\n";
      }
    } else if (*train_cmd) {
      auto tc = train_config_from_json(nlohmann::json::parse(read_text(train_cfg)));
      if (train_af.mode_opt->count()) tc.attention_mode = attention_mode_from_string(train_af.mode);
      if (train_af.w_opt->count()) tc.attention_w = train_af.w;
      const auto res = train(tc, [](const LossRecord& r) {
        std::printf("step %d lr %.3g loss %.6f\n", r.step, r.lr, r.loss);
        std::fflush(stdout);
      });
      std::cout << "checkpoint: " << tc.out.string() << "\n";
    } else if (*gen) {
      const auto tr = parse_triplet(read_text(gen_triplet));
      const auto first = read_png(gen_first);
      const auto model = load_or_init(gen_ckpt, grid_for(tr), gen_af);
      const fs::path tdir = fs::absolute(gen_triplet).parent_path();
      std::map<std::string, Image> refs;
      for (const auto& r : tr.references) {
        std::vector<fs::path> roots;
        if (!gen_assets.empty()) roots.push_back(gen_assets);
        roots.push_back(tdir);
        roots.push_back(tdir.parent_path());
        for (const auto& root : roots) {
          for (const auto& p : {root / r.image_ref, root / (r.image_ref + ".png")})
            if (fs::is_regular_file(p)) {
              refs.emplace(r.image_ref, read_png(p));
              break;
            }
          if (refs.count(r.image_ref)) break;
        }
      }
      GenerationRequest req;
      req.triplet = tr;
      req.steps = gen_steps;
      req.seed = gen_seed;
      const auto out = run_generation(model, req, first, map_lookup(refs), [](int s, int n) {
        std::fprintf(stderr, "\rstep %d/%d", s, n);
        if (s == n) std::fprintf(stderr, "\n");
      });
      write_frames(gen_out, out.frames);
      std::cout << "wrote " << out.frames.size() << " frames to " << gen_out << "\n";
    } else if (*ev) {
      std::optional<Model<float>> model;
      if (!eopt.bypass_sampling) {
        if (ev_ckpt.empty()) throw std::runtime_error("--checkpoint is required unless --bypass-sampling is set");
        model = load_or_init(ev_ckpt, {}, ev_af);
      }
      const auto rep = evaluate(model ? &*model : nullptr, ev_bench, eopt);
      const auto j = to_json(rep);
      std::ofstream(ev_out, std::ios::trunc) << j.dump(2) << "\n";
      std::cout << j["aggregate"].dump(2) << "\n";
    } else if (*srv_cmd) {
      scfg.data_dir = resolve_data_dir(data_dir);
      const auto model = load_or_init(srv_ckpt, LatentGrid{}, srv_af);
      Service svc(scfg, model);
      svc.start();
      httplib::Server server;
      install_routes(server, svc);
      std::cout << "listening on " << host << ":" << port << " (data in " << scfg.data_dir.string() << ")\n";
      if (!server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
    }
  } catch (const TripletError& e) {
    std::cerr << "error: " << e.what() << "\n" << e.report().to_json().dump(2) << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
