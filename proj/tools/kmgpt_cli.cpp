#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "kmgpt/errors.hpp"
#include "kmgpt/meta.hpp"
#include "kmgpt/pipeline.hpp"
#include "kmgpt/service.hpp"
#include "kmgpt/survival.hpp"
#include "kmgpt/synth.hpp"

namespace fs = std::filesystem;
using namespace kmgpt;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + p.string());
  out << text;
}

struct ProviderOpts {
  std::string provider = "sidecar";
  std::string sidecar;
  std::string base_url, model;
};

void add_provider_opts(CLI::App* app, ProviderOpts& o) {
  app->add_option("--provider", o.provider, "Metadata provider")->check(CLI::IsMember({"sidecar", "live"}));
  app->add_option("--sidecar", o.sidecar, "Sidecar metadata JSON");
  app->add_option("--base-url", o.base_url, "Live endpoint base URL");
  app->add_option("--model", o.model, "Live model name");
}

pipeline::PipelineConfig config_from(const ProviderOpts& o) {
  pipeline::PipelineConfig c;
  if (o.provider == "sidecar") {
    c.provider = pipeline::ProviderKind::Sidecar;
    if (!o.sidecar.empty()) c.sidecar_path = o.sidecar;
  } else {
    c.provider = pipeline::ProviderKind::Live;
    if (!o.base_url.empty()) c.live.base_url = o.base_url;
    if (!o.model.empty()) c.live.model = o.model;
  }
  return c;
}

std::vector<synth::GridCell> parse_cells(const std::string& spec) {
  if (spec == "all") return synth::GridCell::all();
  std::vector<synth::GridCell> out;
  std::stringstream ss(spec);
  for (std::string code; std::getline(ss, code, ',');) out.push_back(synth::GridCell::parse(code));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kaplan-Meier plot digitization, IPD reconstruction and meta-analysis"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Reconstruct IPD from one KM plot image");
  std::string image, edits, out = "out";
  std::uint64_t seed = 0;
  bool force = false, upweight = false;
  double tolerance = 0.02;
  ProviderOpts prov;
  run->add_option("--image", image, "Input image")->required()->check(CLI::ExistingFile);
  run->add_option("--edits", edits, "Edits JSON (crop / erase)")->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Clustering seed");
  run->add_option("--out", out, "Output directory");
  run->add_option("--overlay-tolerance", tolerance, "Overlay check tolerance");
  run->add_flag("--force", force, "Continue past a failed input validation");
  run->add_flag("--cluster-upweight", upweight, "Weight saturation and lightness x100 when clustering");
  add_provider_opts(run, prov);

  // validate
  auto* val = app.add_subcommand("validate", "Run the input guard on an image");
  std::string val_image;
  ProviderOpts val_prov;
  val->add_option("--image", val_image, "Input image")->required()->check(CLI::ExistingFile);
  add_provider_opts(val, val_prov);

  // bench
  auto* bench = app.add_subcommand("bench", "Synthetic round-trip benchmark grid");
  std::string cells = "all", bench_out;
  int reps = 2, threads = 0;
  std::uint64_t bench_seed = 2024;
  bench->add_option("--cells", cells, "all or comma-separated codes such as LMH");
  bench->add_option("--reps", reps, "Replicates per cell");
  bench->add_option("--seed", bench_seed, "Master seed");
  bench->add_option("--threads", threads, "Worker threads (0 = all cores)");
  bench->add_option("--out", bench_out, "Output directory for fixtures and summaries");

  // synth
  auto* syn = app.add_subcommand("synth", "Render one synthetic KM fixture");
  std::string cell = "MMM", syn_out = "fixture";
  std::uint64_t syn_seed = 1;
  syn->add_option("--cell", cell, "Grid cell code");
  syn->add_option("--seed", syn_seed, "Seed");
  syn->add_option("--out", syn_out, "Output directory");

  // meta
  auto* meta_cmd = app.add_subcommand("meta", "Bayesian piecewise-exponential meta-analysis");
  std::vector<std::string> ipd_files;
  std::string group_col = "group", arm, intervals = "auto", meta_out = "meta_out";
  int chains = 4, draws = 5000, warmup = 2000, J = 8;
  std::uint64_t meta_seed = 1;
  std::vector<double> horizons;
  meta_cmd->add_option("--ipd", ipd_files, "One IPD CSV per study")->required()->check(CLI::ExistingFile);
  meta_cmd->add_option("--group-col", group_col, "Group column name");
  meta_cmd->add_option("--arm", arm, "Keep only rows of this group");
  meta_cmd->add_option("--intervals", intervals, "auto or comma-separated cut points");
  meta_cmd->add_option("--J", J, "Interval count for auto grids");
  meta_cmd->add_option("--chains", chains);
  meta_cmd->add_option("--draws", draws);
  meta_cmd->add_option("--warmup", warmup);
  meta_cmd->add_option("--seed", meta_seed);
  meta_cmd->add_option("--rmst", horizons, "RMST horizons");
  meta_cmd->add_option("--out", meta_out, "Output directory");

  // serve
  auto* serve = app.add_subcommand("serve", "HTTP API");
  std::string host = "127.0.0.1", job_dir;
  int port = 8080, workers = 0;
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_option("--jobs", job_dir, "Job store directory (default $KMGPT_JOB_DIR or ./jobs)");
  serve->add_option("--workers", workers, "Parallel pipeline runs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      auto cfg = config_from(prov);
      cfg.seed = seed;
      cfg.force = force;
      cfg.cluster_upweight = upweight;
      cfg.overlay_tolerance = tolerance;
      const auto masks = edits.empty() ? std::vector<image::RegionMask>{} : image::parse_edits(slurp(edits));
      const auto res = pipeline::run_pipeline(read_image(image), masks, cfg, fs::path(out));
      std::cout << "records " << res.ipd.size() << ", overlay " << (res.overlay_pass ? "pass" : "FAIL")
                << ", converged " << (res.converged ? "yes" : "no") << "\n";
      for (const auto& w : res.warnings) std::cout << "warning: " << w << "\n";
      std::cout << "artifacts in " << out << "\n";
      return res.overlay_pass ? 0 : 3;
    }
    if (*val) {
      auto cfg = config_from(val_prov);
      auto provider = pipeline::make_provider(cfg);
      const auto rep = mmpu::validate_input(read_image(val_image), *provider);
      std::cout << mmpu::validation_to_json(rep) << "\n";
      return rep.ok ? 0 : 2;
    }
    if (*bench) {
      synth::GridOptions opts;
      opts.cells = parse_cells(cells);
      opts.reps = reps;
      opts.master_seed = bench_seed;
      opts.threads = threads;
      if (!bench_out.empty()) opts.out_dir = fs::path(bench_out);
      const auto s = synth::run_grid(pipeline::bench_pipeline(), opts);
      std::cout << "successes " << s.successes << "/" << s.runs.size() << "\n"
                << "median IAE " << s.median_iae << "\n"
                << "median AE " << s.median_ae << "\n"
                << "median mOS error " << s.median_mos_ae << "\n"
                << "anchor match rate " << s.anchor_match_rate << "\n";
      for (const auto& r : s.runs)
        if (!r.success) std::cout << "failed " << r.cell << " rep " << r.rep << ": " << r.error << "\n";
      return 0;
    }
    if (*syn) {
      synth::GridOptions opts;
      std::mt19937_64 rng(syn_seed);
      const auto cfg = synth::sample_config(synth::GridCell::parse(cell), rng);
      const auto ipd = synth::generate_ipd(cfg, rng);
      const auto plot = synth::render_km_plot({ipd});
      fs::create_directories(syn_out);
      write_png(plot.image, fs::path(syn_out) / "plot.png");
      spit(fs::path(syn_out) / "sidecar.json", synth::sidecar_json(plot));
      spit(fs::path(syn_out) / "truth_ipd.csv", recon::ipd_to_csv(ipd));
      std::cout << "n " << cfg.n << ", median " << cfg.median() << ", eta " << cfg.eta << ", tau " << cfg.tau
                << "\n";
      return 0;
    }
    if (*meta_cmd) {
      std::vector<std::vector<recon::IPDRecord>> studies;
      for (const auto& f : ipd_files) {
        auto recs = recon::ipd_from_csv(slurp(f), group_col);
        if (!arm.empty()) recs = recon::filter_group(recs, arm);
        if (recs.empty()) throw Error(ErrorCode::InvalidArgument, f + ": no records" + (arm.empty() ? "" : " for arm " + arm));
        studies.push_back(std::move(recs));
      }
      meta::IntervalGrid grid;
      if (intervals == "auto") {
        grid = meta::auto_grid(studies, J);
      } else {
        std::vector<double> cuts;
        std::stringstream ss(intervals);
        for (std::string tok; std::getline(ss, tok, ',');) cuts.push_back(std::stod(tok));
        grid = meta::make_grid(cuts);
      }
      const auto stats = meta::bin_ipd(studies, grid);
      meta::SamplerConfig sc;
      sc.chains = chains;
      sc.draws = draws;
      sc.warmup = warmup;
      sc.seed = meta_seed;
      const auto post = meta::sample_posterior(stats, grid, sc);
      fs::create_directories(meta_out);
      spit(fs::path(meta_out) / "draws.csv", meta::draws_csv(post));
      std::vector<double> times;
      for (int i = 0; i <= 200; ++i) times.push_back(grid.end() * i / 200.0);
      spit(fs::path(meta_out) / "bands.csv", meta::bands_csv(meta::pooled_survival(post, grid, times)));
      json summary;
      summary["cuts"] = grid.cuts;
      summary["chains"] = chains;
      summary["warmup"] = warmup;
      summary["draws"] = draws;
      summary["max_rhat"] = post.max_rhat();
      summary["min_ess"] = post.min_ess();
      const auto med = meta::estimate_pooled_median(post, grid);
      summary["pooled_median"] = {{"median", med.median ? json(*med.median) : json(nullptr)},
                                  {"ci", {med.lo ? json(*med.lo) : json(nullptr), med.hi ? json(*med.hi) : json(nullptr)}},
                                  {"not_reached", med.not_reached}};
      summary["rmst"] = json::array();
      for (double h : horizons) {
        const auto r = meta::rmst(post, grid, h);
        summary["rmst"].push_back({{"horizon", h}, {"mean", r.mean}, {"q025", r.q025}, {"q50", r.q50}, {"q975", r.q975}});
      }
      spit(fs::path(meta_out) / "summary.json", summary.dump(2));
      std::cout << summary.dump(2) << "\n";
      return 0;
    }
    if (*serve) {
      service::ServiceConfig sc;
      sc.host = host;
      sc.port = port;
      sc.workers = workers;
      if (!job_dir.empty()) sc.job_dir = job_dir;
      else if (const char* e = std::getenv("KMGPT_JOB_DIR")) sc.job_dir = e;
      service::Service svc(sc);
      const int bound = svc.bind();
      std::cerr << "listening on " << host << ":" << bound << ", jobs in " << sc.job_dir << "\n";
      svc.listen();
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
