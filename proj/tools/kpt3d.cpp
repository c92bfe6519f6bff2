// kpt3d command line: simulate, targets, track, eval, bench, label-serve.
//
// Settings come from built-in defaults, then --config FILE, then flags.
// Log level: KPT3D_LOG_LEVEL=trace|debug|info|warn|error|off (default info).

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "kpt3d/config.hpp"
#include "kpt3d/dataset.hpp"
#include "kpt3d/simulator.hpp"
#include "kpt3d/tracking.hpp"
#include "kpt3d/label_service.hpp"

namespace fs = std::filesystem;
using namespace kpt3d;

namespace {

// Flags that override the config file. Unset optionals leave it alone.
struct Overrides
{
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::string> scene;
  std::optional<int> sequences, test_sequences, objects;
  std::optional<double> duration, sigma, pixel_noise, threshold, cutoff;
  std::optional<unsigned> threads;

  Config apply() const
  {
    Config c = config_file.empty() ? Config{} : load_config(config_file);
    if (seed)
      c.seed = *seed;
    if (mode)
      c.mode = track_mode_from_string(*mode);
    if (scene)
      c.scene.sim.kind = scene_kind_from_string(*scene);
    if (sequences)
      c.scene.sequences = *sequences;
    if (test_sequences)
      c.scene.test_sequences = *test_sequences;
    if (objects)
      c.scene.sim.objects = *objects;
    if (duration)
      c.scene.sim.duration = *duration;
    if (sigma)
      c.targets.maps.sigma = *sigma;
    if (pixel_noise)
      c.targets.pixel_noise = *pixel_noise;
    if (threshold)
      c.tracking.extraction.threshold = *threshold;
    if (cutoff)
      c.tracking.cutoff = *cutoff;
    if (threads)
      c.targets.threads = *threads;
    c.validate();
    return c;
  }
};

void log_warnings(const std::vector<std::string>& warnings)
{
  for (const auto& w : warnings)
    spdlog::warn("{}", w);
}

std::vector<fs::path> sequence_dirs(const fs::path& data, const std::vector<std::string>& only)
{
  if (!fs::is_directory(data))
    throw NotFound("data directory not found: " + data.string());
  std::vector<fs::path> out;
  if (!only.empty()) {
    for (const auto& id : only) {
      if (!fs::exists(data / id / "sequence.json"))
        throw NotFound("sequence " + id + " not found in " + data.string());
      out.push_back(data / id);
    }
    return out;
  }
  for (const auto& e : fs::directory_iterator(data))
    if (e.is_directory() && fs::exists(e.path() / "sequence.json"))
      out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty())
    throw NotFound("no sequences in " + data.string());
  return out;
}

// Simulated sequences carry their true poses next to the recorded ones.
SequenceDataset load_truth(const fs::path& dir)
{
  auto seq = load_sequence(dir);
  if (fs::exists(dir / "truth_poses.txt")) {
    std::ifstream in(dir / "truth_poses.txt");
    seq.frames = read_poses(in);
  }
  return seq;
}

std::string results_name(TrackMode mode) { return mode == TrackMode::kMono ? "results_mono.txt" : "results_stereo.txt"; }

void write_json(const fs::path& path, const nlohmann::json& j)
{
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  write_file_atomic(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

void run_simulate(const Config& c, const fs::path& out)
{
  const auto stamp = reproducibility_stamp(c);
  fs::create_directories(out);
  nlohmann::json ids = nlohmann::json::array();
  for (int k = 0; k < c.scene.sequences; ++k) {
    std::ostringstream id;
    id << to_string(c.scene.sim.kind) << '-' << std::setw(3) << std::setfill('0') << k;
    auto sim = simulate_sequence(c.scene.sim, mix_seed(c.seed) + static_cast<std::uint64_t>(k), id.str());
    sim.recorded.split = k >= c.scene.sequences - c.scene.test_sequences ? Split::kTest : Split::kTrain;
    save_sequence(out / id.str(), sim.recorded);
    std::ostringstream truth;
    write_poses(truth, sim.truth.frames);
    write_file_atomic(out / id.str() / "truth_poses.txt", truth.str());
    spdlog::info("{}: {} frames, {} objects, {}", id.str(), sim.truth.frames.size(), sim.truth.labels.size(),
                 to_string(sim.recorded.split));
    ids.push_back(id.str());
  }
  write_json(out / "corpus.json", {{"version", 1}, {"stamp", stamp}, {"config", c.to_json()}, {"sequences", ids}});
  std::cout << "simulated " << c.scene.sequences << " sequences into " << out.string() << "\n";
}

void run_targets(const Config& c, const fs::path& data, const std::vector<std::string>& only)
{
  const auto stamp = reproducibility_stamp(c);
  GenerateOptions opt;
  opt.targets = c.targets.maps;
  opt.pixel_noise = c.targets.pixel_noise;
  opt.seed = c.seed;
  opt.threads = c.targets.threads;
  for (const auto& dir : sequence_dirs(data, only)) {
    // Maps stand in for network output, so they are rendered from the true
    // poses when those are known.
    const auto seq = load_truth(dir);
    std::vector<std::string> warnings;
    generate_dataset(seq, dir / "targets", opt, stamp, &warnings);
    log_warnings(warnings);
    spdlog::info("{}: wrote {} frames of targets", seq.id, seq.frames.size());
  }
}

void run_track(const Config& c, const fs::path& data, const std::vector<std::string>& only)
{
  const auto stamp = reproducibility_stamp(c);
  for (const auto& dir : sequence_dirs(data, only)) {
    const auto seq = load_sequence(dir);
    const auto target_dir = dir / "targets";
    if (!fs::exists(target_dir / "manifest.json"))
      throw NotFound(seq.id + ": no targets; run 'kpt3d targets' first");
    const auto manifest = read_json_file(target_dir / "manifest.json");
    if (manifest.at("frames").size() != seq.frames.size())
      throw FormatError(seq.id + ": manifest frame count differs from poses");
    StageTimings t;
    const auto results = track_sequence(
        seq, [&](std::size_t k, Camera cam) { return load_frame_maps(target_dir, manifest, k, cam); }, c.mode,
        c.tracking, &t);
    save_results(dir / results_name(c.mode), results, stamp);
    std::size_t objects = 0;
    for (const auto& r : results)
      objects += r.objects.size();
    spdlog::info("{}: tracked {} frames, {} object detections", seq.id, results.size(), objects);
  }
}

void run_eval(const Config& c, const fs::path& data, const std::vector<std::string>& only, const std::string& split,
              fs::path report_path)
{
  const auto stamp = reproducibility_stamp(c);
  std::vector<SequenceDataset> truths;
  std::vector<std::vector<FrameResult>> preds;
  nlohmann::json per_seq = nlohmann::json::object();
  for (const auto& dir : sequence_dirs(data, only)) {
    auto truth = load_truth(dir);
    if (split != "all" && to_string(truth.split) != split)
      continue;
    const auto path = dir / results_name(c.mode);
    if (!fs::exists(path))
      throw NotFound(truth.id + ": no " + results_name(c.mode) + "; run 'kpt3d track' first");
    auto pred = load_results(path);
    per_seq[truth.id] = evaluate(pred, truth, c.eval).to_json();
    truths.push_back(std::move(truth));
    preds.push_back(std::move(pred));
  }
  if (truths.empty())
    throw NotFound("no " + split + " sequences to evaluate in " + data.string());
  std::vector<const SequenceDataset*> ptrs;
  for (const auto& t : truths)
    ptrs.push_back(&t);
  const auto pooled = evaluate_many(preds, ptrs, c.eval);
  auto pooled_json = pooled.to_json();
  pooled_json.erase("timings_ms");
  for (auto& [id, m] : per_seq.items())
    m.erase("timings_ms");
  const nlohmann::json report{{"version", 1},
                              {"stamp", stamp},
                              {"mode", c.mode == TrackMode::kMono ? "mono" : "stereo"},
                              {"split", split},
                              {"pooled", pooled_json},
                              {"sequences", per_seq}};
  if (report_path.empty())
    report_path = data / ("report_" + std::string(c.mode == TrackMode::kMono ? "mono" : "stereo") + ".json");
  write_json(report_path, report);
  std::printf("sequences %zu  frames %zu  mean %.3f cm  xy %.3f cm  <3cm %.1f%%  p25 %.3f  p75 %.3f  "
              "matched %zu  misses %zu  false_pos %zu\n",
              truths.size(), pooled.frames, pooled.mean_3d, pooled.xy_mean, pooled.pct_under_3cm, pooled.p25,
              pooled.p75, pooled.matched, pooled.misses, pooled.false_positives);
}

void run_bench(const Config& c, std::size_t frames, const fs::path& out)
{
  const auto stamp = reproducibility_stamp(c);
  std::vector<std::pair<FrameMaps, FrameMaps>> maps;
  std::vector<Frame> poses;
  std::optional<SequenceDataset> first;
  GtMapOptions gt;
  gt.generate.targets = c.targets.maps;
  for (std::uint64_t k = 0; poses.size() < frames; ++k) {
    const auto sim = simulate_sequence(c.scene.sim, mix_seed(c.seed) + k);
    for (std::size_t f = 0; f < sim.truth.frames.size() && poses.size() < frames; ++f) {
      maps.emplace_back(gt_frame_maps(sim.truth, f, Camera::kLeft, gt), gt_frame_maps(sim.truth, f, Camera::kRight, gt));
      poses.push_back(sim.recorded.frames[f]);
    }
    if (!first)
      first = sim.recorded;
  }
  const auto t = bench_stages(maps, first->rig(), poses, first->category.center_channel(), c.tracking);
  const nlohmann::json report{{"version", 1},
                              {"stamp", stamp},
                              {"frames", frames},
                              {"timings_ms",
                               {{"extraction", t.extraction_ms},
                                {"object_association", t.object_association_ms},
                                {"left_right_association", t.left_right_ms},
                                {"triangulation", t.triangulation_ms},
                                {"total", t.total_ms()}}}};
  if (!out.empty())
    write_json(out, report);
  std::printf("frames %zu  extraction %.3f ms  object assoc %.3f ms  L-R assoc %.3f ms  triangulation %.3f ms  "
              "total %.3f ms\n",
              frames, t.extraction_ms, t.object_association_ms, t.left_right_ms, t.triangulation_ms, t.total_ms());
}

httplib::Server* g_server = nullptr;

void run_label_serve(const Config& c, const fs::path& data)
{
  std::optional<CategorySpec> category;
  if (!c.category_file.empty())
    category = category_from_json(read_json_file(c.category_file));
  LabelService service(data, category);
  httplib::Server server;
  service.mount(server);
  g_server = &server;
  std::signal(SIGINT, [](int) { g_server->stop(); });
  std::signal(SIGTERM, [](int) { g_server->stop(); });
  int port = c.service.port;
  if (port == 0)
    port = server.bind_to_any_port(c.service.host);
  else if (!server.bind_to_port(c.service.host, port))
    throw Error("cannot bind " + c.service.host + ":" + std::to_string(port));
  std::cout << "listening on " << c.service.host << ":" << port << std::endl;
  server.listen_after_bind();
  g_server = nullptr;
}

void setup_logging()
{
  auto logger = spdlog::stderr_color_mt("kpt3d");
  logger->set_pattern("%^%l%$: %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("KPT3D_LOG_LEVEL")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to off.
    if (level == spdlog::level::off && std::string(env) != "off")
      throw Error(std::string("KPT3D_LOG_LEVEL: unknown level '") + env + "'");
    spdlog::set_level(level);
  }
}

}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Keypoint-based 3D object tracking from stereo heatmaps", "kpt3d"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  app.fallthrough();

  Overrides o;
  app.add_option("-c,--config", o.config_file, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "random seed");

  fs::path out, data, report;
  std::vector<std::string> only;
  std::string split = "test";
  std::size_t frames = 500;
  std::optional<std::string> host, category_file;
  std::optional<int> port;

  auto* sim = app.add_subcommand("simulate", "write synthetic sequences with ground-truth labels");
  sim->add_option("-o,--out", out, "output directory")->required();
  sim->add_option("--scene", o.scene, "valve or cups");
  sim->add_option("--sequences", o.sequences, "number of sequences");
  sim->add_option("--test-sequences", o.test_sequences, "how many of the last sequences are tagged test");
  sim->add_option("--objects", o.objects, "objects per cups scene (0: random 1-4)");
  sim->add_option("--duration", o.duration, "seconds per sequence");

  auto* tgt = app.add_subcommand("targets", "render heatmap, center-field and depth tensors");
  tgt->add_option("-d,--data", data, "data directory")->required();
  tgt->add_option("--sequence", only, "limit to these sequence ids");
  tgt->add_option("--sigma", o.sigma, "heatmap RBF sigma, output pixels");
  tgt->add_option("--pixel-noise", o.pixel_noise, "keypoint jitter, image pixels");
  tgt->add_option("--threads", o.threads, "worker threads (0: all cores)");

  auto* trk = app.add_subcommand("track", "run the 3D pipeline over generated maps");
  trk->add_option("-d,--data", data, "data directory")->required();
  trk->add_option("--sequence", only, "limit to these sequence ids");
  trk->add_option("--mode", o.mode, "stereo or mono");
  trk->add_option("--threshold", o.threshold, "heatmap detection threshold");
  trk->add_option("--cutoff", o.cutoff, "epipolar residual cutoff");

  auto* ev = app.add_subcommand("eval", "score tracked results against ground truth");
  ev->add_option("-d,--data", data, "data directory")->required();
  ev->add_option("--sequence", only, "limit to these sequence ids");
  ev->add_option("--mode", o.mode, "which results to score: stereo or mono");
  ev->add_option("--split", split, "test, train or all")->check(CLI::IsMember({"test", "train", "all"}));
  ev->add_option("-r,--report", report, "report path (default <data>/report_<mode>.json)");

  auto* bench = app.add_subcommand("bench", "time the per-frame stages on simulated maps");
  bench->add_option("--frames", frames, "frames to time")->check(CLI::PositiveNumber);
  bench->add_option("--scene", o.scene, "valve or cups");
  bench->add_option("-o,--out", out, "also write the timings as JSON");

  auto* serve = app.add_subcommand("label-serve", "HTTP backend for the labeling UI");
  serve->add_option("-d,--data", data, "data directory")->required();
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "port (0: any free port)");
  serve->add_option("--category-file", category_file, "category for sequences without labels");

  CLI11_PARSE(app, argc, argv);

  try {
    setup_logging();
    Config c = o.apply();
    if (host)
      c.service.host = *host;
    if (port)
      c.service.port = *port;
    if (category_file)
      c.category_file = *category_file;
    c.validate();
    spdlog::debug("{}", reproducibility_stamp(c));

    if (sim->parsed())
      run_simulate(c, out);
    else if (tgt->parsed())
      run_targets(c, data, only);
    else if (trk->parsed())
      run_track(c, data, only);
    else if (ev->parsed())
      run_eval(c, data, only, split, report);
    else if (bench->parsed())
      run_bench(c, frames, out);
    else if (serve->parsed())
      run_label_serve(c, data);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "kpt3d: error: %s\n", e.what());
    return 1;
  }
  return 0;
}
