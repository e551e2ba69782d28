#include "kmgpt/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>
#include <opencv2/imgproc.hpp>

#include "cv_bridge.hpp"
#include "kmgpt/ocr.hpp"
#include "kmgpt/survival.hpp"

namespace kmgpt::pipeline {

using nlohmann::json;

void PipelineConfig::validate() const {
  switch (provider) {
    case ProviderKind::Sidecar:
      if (!sidecar_path && !sidecar_text)
        throw Error(ErrorCode::InvalidArgument, "sidecar provider needs a sidecar path");
      break;
    case ProviderKind::Scripted:
      if (!scripted) throw Error(ErrorCode::InvalidArgument, "scripted provider needs a script");
      break;
    case ProviderKind::Live:
      break;
  }
  if (!(overlay_tolerance > 0)) throw Error(ErrorCode::InvalidArgument, "overlay tolerance must be positive");
}

namespace {

// Forwards to a shared provider so callers keep ownership of scripts.
class SharedProvider final : public mmpu::MetadataProvider {
 public:
  explicit SharedProvider(std::shared_ptr<mmpu::MetadataProvider> p) : p_(std::move(p)) {}
  std::string name() const override { return p_->name(); }
  std::string complete(const mmpu::ProviderRequest& r) override { return p_->complete(r); }

 private:
  std::shared_ptr<mmpu::MetadataProvider> p_;
};

}  // namespace

std::unique_ptr<mmpu::MetadataProvider> make_provider(const PipelineConfig& c) {
  c.validate();
  switch (c.provider) {
    case ProviderKind::Sidecar:
      if (c.sidecar_text) return std::make_unique<mmpu::SidecarProvider>(mmpu::SidecarProvider::from_text(*c.sidecar_text));
      return std::make_unique<mmpu::SidecarProvider>(*c.sidecar_path);
    case ProviderKind::Scripted:
      return std::make_unique<SharedProvider>(c.scripted);
    case ProviderKind::Live:
      return std::make_unique<mmpu::LiveProvider>(c.live);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown provider kind");
}

StageError::StageError(std::string stage, ErrorCode code, const std::string& message)
    : Error(code, "stage " + stage + ": " + message), stage_(std::move(stage)) {}

namespace {

template <typename F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e.code(), e.what());
  } catch (const std::exception& e) {
    throw StageError(name, ErrorCode::InvalidArgument, e.what());
  }
}

void write_text(const std::optional<std::filesystem::path>& dir, const std::string& name, const std::string& s) {
  if (!dir) return;
  std::ofstream out(*dir / name, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + (*dir / name).string());
  out << s;
}

void write_image(const std::optional<std::filesystem::path>& dir, const std::string& name, const RasterImage& img) {
  if (dir) write_png(img, *dir / name);
}

json geometry_json(const geometry::AxisGeometry& g) {
  return {{"u_x0", g.u_x0},           {"u_x1", g.u_x1},
          {"v_y0", g.v_y0},           {"v_y1", g.v_y1},
          {"margin_left", g.margin_left}, {"margin_bottom", g.margin_bottom},
          {"thickness_v", g.thickness_v}, {"thickness_h", g.thickness_h}};
}

json range_json(const geometry::AxisRange& r) {
  return {{"min", r.min}, {"max", r.max}, {"increment", r.increment}};
}

std::vector<geometry::TickToken> to_ticks(const std::vector<ocr::OcrToken>& tokens) {
  std::vector<geometry::TickToken> out;
  for (const auto& t : tokens) {
    geometry::TickToken k;
    k.text = t.text;
    k.numeric_value = geometry::parse_number(t.text);
    k.u = 0.5 * (t.box.x0 + t.box.x1);
    k.v = 0.5 * (t.box.y0 + t.box.y1);
    k.box = t.box;
    out.push_back(k);
  }
  return out;
}

// OCR ranges only count as evidence when at least three distinct values were read.
void fill_evidence(const std::vector<geometry::TickToken>& ticks, geometry::Axis axis,
                   std::optional<geometry::AxisRange>& range, std::vector<double>& values) {
  for (const auto& t : ticks)
    if (t.numeric_value) values.push_back(*t.numeric_value);
  std::vector<double> uniq = values;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  if (uniq.size() < 3) return;
  try {
    range = geometry::detect_ranges(ticks, axis);
  } catch (const Error&) {
    range.reset();
  }
}

std::vector<ocr::OcrToken> try_ocr(const RasterImage& img, PixelRect r, image::RegionKind kind) {
  r.x0 = std::clamp(r.x0, 0, img.width());
  r.x1 = std::clamp(r.x1, 0, img.width());
  r.y0 = std::clamp(r.y0, 0, img.height());
  r.y1 = std::clamp(r.y1, 0, img.height());
  if (r.width() < 4 || r.height() < 4) return {};
  try {
    return ocr::run_ocr(img, r, kind);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::OcrEmpty) return {};
    throw;
  }
}

}  // namespace

RasterImage render_overlay(const RasterImage& prepped, const geometry::Calibration& cal,
                           const std::vector<std::vector<recon::IPDRecord>>& groups, double y_scale) {
  cv::Mat m = detail::to_bgr(prepped);
  constexpr int kShift = 4;
  auto fp = [&](double t, double s) {
    const auto [u, v] = cal.inverse(t, s * y_scale);
    return cv::Point(static_cast<int>(std::lround(u * (1 << kShift))),
                     static_cast<int>(std::lround(v * (1 << kShift))));
  };
  for (const auto& g : groups) {
    if (g.empty()) continue;
    const auto km = recon::km_estimate(g);
    double last = 0;
    for (const auto& r : g) last = std::max(last, r.time);
    std::vector<cv::Point> poly{fp(0, 1)};
    double s = 1;
    for (std::size_t k = 0; k < km.step_times.size(); ++k) {
      poly.push_back(fp(km.step_times[k], s));
      s = km.probabilities[k];
      poly.push_back(fp(km.step_times[k], s));
    }
    poly.push_back(fp(last, s));
    cv::polylines(m, std::vector<std::vector<cv::Point>>{poly}, false, cv::Scalar(0, 200, 0), 2,
                  cv::LINE_AA, kShift);
  }
  return detail::from_bgr(m);
}

PipelineResult run_pipeline(const RasterImage& input, const std::vector<image::RegionMask>& edits,
                            const PipelineConfig& config, const std::optional<std::filesystem::path>& out_dir,
                            const StateCallback& on_state) {
  stage("config", [&] { config.validate(); });
  if (out_dir) std::filesystem::create_directories(*out_dir);
  auto notify = [&](const char* s) {
    if (on_state) on_state(s);
  };
  PipelineResult res;
  json report;
  report["seed"] = config.seed;
  report["prompt_sha256"] = {{"inputguard", mmpu::sha256_hex(mmpu::inputguard_prompt())},
                             {"metadata", mmpu::sha256_hex(mmpu::metadata_prompt())}};

  write_image(out_dir, "00_input.png", input);
  write_text(out_dir, "05_edits.json", image::edits_to_json(edits));
  report["input_sha256"] = mmpu::sha256_hex(std::string_view(
      reinterpret_cast<const char*>(input.data().data()), input.data().size()));

  const RasterImage edited = stage("edits", [&] { return image::apply_edits(input, edits); });
  res.prepped = stage("enhance", [&] { return image::enhance(edited, config.enhance); });
  write_image(out_dir, "10_prepped.png", res.prepped);

  auto provider = stage("provider", [&] { return make_provider(config); });
  report["provider"] = provider->name();

  res.validation = stage("validate", [&] { return mmpu::validate_input(res.prepped, *provider, config.retry); });
  report["validation"] = json::parse(mmpu::validation_to_json(res.validation));
  if (!res.validation.ok) {
    std::string msg = "input rejected";
    for (const auto& i : res.validation.issues) msg += "; " + i.component + ": " + i.message;
    if (!config.force) {
      write_text(out_dir, "60_report.json", report.dump(2));
      throw StageError("validate", ErrorCode::ValidationFailed, msg);
    }
    res.warnings.push_back("forced past validation: " + msg);
  }
  notify("validated");

  res.geometry = stage("geometry", [&] { return geometry::locate_axes(res.prepped); });
  const auto& g = res.geometry;

  // Text regions: tick labels left of the y axis; tick labels, title and risk
  // table below the x axis.
  std::vector<ocr::OcrToken> tokens;
  mmpu::OcrEvidence evidence;
  stage("ocr", [&] {
    const int left_end = static_cast<int>(std::floor(g.u_x0 - g.thickness_v / 2.0)) - 1;
    const int below = static_cast<int>(std::ceil(g.v_y1 + g.thickness_h / 2.0)) + 1;
    const PixelRect left{0, std::max(0, static_cast<int>(g.v_y0) - 20), left_end,
                         std::min(res.prepped.height(), static_cast<int>(g.v_y1) + 20)};
    const PixelRect under{0, below, res.prepped.width(), res.prepped.height()};
    auto ys = try_ocr(res.prepped, left, image::RegionKind::AxisLabels);
    auto xs = try_ocr(res.prepped, under, image::RegionKind::AxisLabels);
    std::vector<ocr::OcrToken> all = ys;
    all.insert(all.end(), xs.begin(), xs.end());
    const auto [xt, yt] = geometry::assign_tokens(to_ticks(all), g);
    fill_evidence(xt, geometry::Axis::X, evidence.x, evidence.x_values);
    fill_evidence(yt, geometry::Axis::Y, evidence.y, evidence.y_values);
    tokens = all;
    if (config.ocr_risk_table) {
      auto rt = try_ocr(res.prepped, under, image::RegionKind::RiskTable);
      tokens.insert(tokens.end(), rt.begin(), rt.end());
    }
  });
  report["ocr_tokens"] = tokens.size();
  notify("prepared");

  const auto meta_res = stage("metadata", [&] {
    return mmpu::extract_metadata(res.prepped, tokens, *provider, evidence, config.retry);
  });
  res.metadata = meta_res.metadata;
  res.warnings.insert(res.warnings.end(), meta_res.warnings.begin(), meta_res.warnings.end());
  const auto& md = res.metadata;
  const double y_scale = md.y_end > 1.5 ? 100.0 : 1.0;  // percent axes
  const geometry::Calibration cal = stage("calibration", [&] {
    return geometry::Calibration(g, {md.x_start, md.x_end, md.x_increment}, {md.y_start, md.y_end, md.y_increment});
  });
  {
    json m;
    m["metadata"] = json::parse(mmpu::metadata_to_json(md));
    m["geometry"] = geometry_json(g);
    m["x_range"] = range_json(cal.x());
    m["y_range"] = range_json(cal.y());
    m["repaired"] = meta_res.repaired;
    m["warnings"] = meta_res.warnings;
    m["ocr"] = json::parse(ocr::tokens_to_json(tokens));
    write_text(out_dir, "20_metadata.json", m.dump(2));
  }

  std::vector<int> cluster_to_group;
  stage("curves", [&] {
    const auto features = curves::extract_features(res.prepped, g);
    const auto clustering = curves::cluster_curves(features, md.num_curves, config.cluster_upweight, config.seed);
    std::vector<std::pair<double, double>> pts;
    pts.reserve(features.size());
    for (const auto& f : features) pts.emplace_back(f.u, f.v);
    std::vector<double> scores(features.size(), 1.0);
    if (md.num_curves > 1 && features.size() > 8) scores = curves::consensus_scores(pts, clustering.labels);

    std::vector<curves::CurveTrace> traces;
    std::vector<Rgb> medoids;
    for (const auto& c : clustering.clusters) {
      std::vector<std::pair<int, int>> px;
      std::vector<double> sc;
      for (std::size_t i : c.members) {
        px.emplace_back(features[i].u, features[i].v);
        sc.push_back(scores[i]);
      }
      const auto path = curves::trace_path(px);
      traces.push_back(curves::build_trace(px, path, sc, cal, c.label));
      medoids.push_back(features[c.medoid].rgb);
    }
    traces = curves::repair_overlaps(traces);
    cluster_to_group = mmpu::match_groups(md.groups, medoids);
    for (std::size_t i = 0; i < traces.size(); ++i) {
      const int gi = cluster_to_group[i];
      traces[i].group = gi < static_cast<int>(md.groups.size()) ? md.groups[gi].label : std::to_string(gi);
      if (y_scale != 1.0)
        for (auto& p : traces[i].points) p.second /= y_scale;
    }
    res.traces = traces;
  });
  write_text(out_dir, "30_traces.json", curves::traces_to_json(res.traces));
  notify("extracted");

  stage("reconstruct", [&] {
    res.converged = true;
    for (std::size_t i = 0; i < res.traces.size(); ++i) {
      const int gi = cluster_to_group[i];
      GroupResult gr;
      gr.group = res.traces[i].group;
      gr.curve = {res.traces[i].points, gr.group};
      recon::RiskRow row{md.risk_table.anchor_times, {}};
      if (gi < static_cast<int>(md.risk_table.counts.size())) row.counts = md.risk_table.counts[gi];
      if (row.counts.empty()) throw Error(ErrorCode::InvalidRiskTable, "no risk row for group " + gr.group);
      gr.reconstruction = recon::reconstruct_ipd(gr.curve, row);
      res.converged = res.converged && gr.reconstruction.converged;
      res.groups.push_back(std::move(gr));
    }
    std::sort(res.groups.begin(), res.groups.end(), [&](const GroupResult& a, const GroupResult& b) {
      auto idx = [&](const std::string& l) {
        for (std::size_t k = 0; k < md.groups.size(); ++k)
          if (md.groups[k].label == l) return k;
        return md.groups.size();
      };
      return idx(a.group) < idx(b.group);
    });
    for (const auto& gr : res.groups)
      res.ipd.insert(res.ipd.end(), gr.reconstruction.records.begin(), gr.reconstruction.records.end());
  });
  write_text(out_dir, "40_ipd.csv", recon::ipd_to_csv(res.ipd));

  stage("overlay", [&] {
    res.overlay_pass = true;
    std::vector<std::vector<recon::IPDRecord>> per_group;
    for (auto& gr : res.groups) {
      gr.overlay = recon::overlay_check(gr.curve, gr.reconstruction.records, config.overlay_tolerance);
      res.overlay_pass = res.overlay_pass && gr.overlay.pass;
      per_group.push_back(gr.reconstruction.records);
    }
    res.overlay = render_overlay(res.prepped, cal, per_group, y_scale);
  });
  write_image(out_dir, "50_overlay.png", res.overlay);
  notify("reconstructed");

  report["warnings"] = res.warnings;
  report["overlay_pass"] = res.overlay_pass;
  report["converged"] = res.converged;
  report["groups"] = json::array();
  for (const auto& gr : res.groups) {
    const auto& r = gr.reconstruction;
    int events = 0;
    for (const auto& rec : r.records) events += rec.status;
    const auto km = recon::km_estimate(r.records);
    const auto med = recon::median_survival(km);
    json jg = {{"group", gr.group},
               {"n", r.records.size()},
               {"events", events},
               {"converged", r.converged},
               {"iterations", r.iterations},
               {"recomputed_at_risk", r.recomputed_at_risk},
               {"overlay_max_gap", gr.overlay.max_gap},
               {"overlay_pass", gr.overlay.pass},
               {"diagnostic", r.diagnostic}};
    jg["median"] = med.median ? json(*med.median) : json(nullptr);
    jg["median_ci"] = {med.ci_low ? json(*med.ci_low) : json(nullptr), med.ci_high ? json(*med.ci_high) : json(nullptr)};
    report["groups"].push_back(jg);
  }
  res.report_json = report.dump(2);
  write_text(out_dir, "60_report.json", res.report_json);
  return res;
}

synth::BenchPipeline bench_pipeline(PipelineConfig base) {
  return [base](const synth::BenchCase& bc) {
    PipelineConfig cfg = base;
    cfg.provider = ProviderKind::Sidecar;
    cfg.sidecar_path.reset();
    cfg.sidecar_text = synth::sidecar_json(bc.plot);
    cfg.seed = bc.seed;
    const auto r = run_pipeline(bc.plot.image, {}, cfg);
    return synth::BenchOutput{r.ipd, r.converged};
  };
}

}  // namespace kmgpt::pipeline
