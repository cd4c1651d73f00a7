#include "cli.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <new>
#include <optional>
#include <set>
#include <vector>

#include "CLI11.hpp"
#include "fkb/adapt.hpp"
#include "fkb/camera.hpp"
#include "fkb/digest.hpp"
#include "fkb/error.hpp"
#include "fkb/eval.hpp"
#include "fkb/features.hpp"
#include "fkb/image.hpp"
#include "fkb/parallel.hpp"
#include "fkb/warp.hpp"
#include "json.hpp"

#ifndef FKB_VERSION
#define FKB_VERSION "0.0.0"
#endif

namespace fkb::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Globals {
  std::uint64_t seed = 0;
  int threads = 0;
  std::string out;
};

struct Size {
  int width = 0;  // 0 = keep the native size
  int height = 0;
  bool native() const { return width == 0; }
  std::string str() const { return native() ? "native" : std::to_string(width) + "x" + std::to_string(height); }
};

Size parse_size(const std::string& text) {
  if (text == "native") return {};
  const auto x = text.find('x');
  try {
    if (x != std::string::npos) {
      std::size_t p1 = 0;
      std::size_t p2 = 0;
      const int w = std::stoi(text.substr(0, x), &p1);
      const int h = std::stoi(text.substr(x + 1), &p2);
      if (p1 == x && p2 == text.size() - x - 1 && w > 0 && h > 0) return {w, h};
    }
  } catch (const std::exception&) {
  }
  fail(ErrorCode::kUsage, "size must be WxH or 'native', got '" + text + "'");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::FILE* f = std::fopen(path.string().c_str(), "wb");
  if (!f) fail(ErrorCode::kIo, "cannot write " + path.string());
  const std::size_t n = std::fwrite(text.data(), 1, text.size(), f);
  const bool ok = n == text.size() && std::fclose(f) == 0;
  if (!ok) fail(ErrorCode::kIo, "write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::FILE* f = std::fopen(path.string().c_str(), "rb");
  if (!f) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::string text;
  char buf[65536];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, n);
  std::fclose(f);
  return text;
}

/// Collects the run manifest: resolved configuration plus input digests.
class Run {
 public:
  Run(std::string subcommand, const Globals& g) : g_(g) {
    if (g.out.empty()) fail(ErrorCode::kUsage, "--out is required");
    std::error_code ec;
    fs::create_directories(g.out, ec);
    if (ec) fail(ErrorCode::kIo, "cannot create output directory " + g.out + ": " + ec.message());
    manifest_ = {{"tool", "fkb"},
                 {"version", FKB_VERSION},
                 {"subcommand", std::move(subcommand)},
                 {"seed", g.seed},
                 {"threads", g.threads},
                 {"config", json::object()},
                 {"inputs", json::array()}};
  }

  json& config() { return manifest_["config"]; }
  json& manifest() { return manifest_; }
  fs::path out() const { return g_.out; }

  void input_file(const std::string& path) {
    manifest_["inputs"].push_back({{"path", path}, {"sha256", to_hex(sha256_file(path))}});
  }
  // Directory inputs are identified by their own manifest.
  void input_dir(const std::string& dir) { input_file((fs::path(dir) / "manifest.json").string()); }

  void write() const { write_text(fs::path(g_.out) / "manifest.json", manifest_.dump(2) + "\n"); }

 private:
  const Globals& g_;
  json manifest_;
};

std::vector<std::string> collect_images(const std::vector<std::string>& positional, const std::string& corpus,
                                        int stride, int limit) {
  std::vector<std::string> paths = positional;
  if (!corpus.empty()) {
    std::vector<std::string> more;
    if (fs::is_directory(corpus)) {
      more = ingest_sequence(corpus, stride, limit);
    } else {
      more = read_path_list(corpus);
      const fs::path base = fs::path(corpus).parent_path();
      for (auto& p : more) {
        if (fs::path(p).is_relative()) p = (base / p).string();
      }
    }
    paths.insert(paths.end(), more.begin(), more.end());
  }
  if (paths.empty()) fail(ErrorCode::kEmptyDataset, "no input images");
  return paths;
}

ImageU8 load_resized(const std::string& path, const Size& size) {
  ImageU8 img = load_image(path);
  if (!size.native() && (img.width() != size.width || img.height() != size.height)) {
    img = resize_bilinear(img, size.width, size.height);
  }
  return img;
}

std::string unique_stem(const std::string& path, std::set<std::string>& seen) {
  const std::string stem = fs::path(path).stem().string();
  if (!seen.insert(stem).second) fail(ErrorCode::kUsage, "two inputs share the file stem '" + stem + "'");
  return stem;
}

std::string fmt_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Subcommand options

struct DetectorFlags {
  std::string algo = "harris";
  int nms = 4;
  int k = 300;
  int fast_threshold = 20;
  double quality = 0.01;
  double harris_k = 0.04;
  double window_sigma = 0.0;

  void add(CLI::App* app, const std::string& algo_flag = "--algo") {
    app->add_option(algo_flag, algo, "Detector: harris, shi or fast")->capture_default_str();
    app->add_option("--nms", nms, "NMS half window (px)")->capture_default_str();
    app->add_option("--k", k, "Keep the k strongest points")->capture_default_str();
    app->add_option("--fast-threshold", fast_threshold, "FAST intensity threshold")->capture_default_str();
    app->add_option("--quality", quality, "Harris/Shi floor as a fraction of the peak response")
        ->capture_default_str();
    app->add_option("--harris-k", harris_k, "Harris trace weight")->capture_default_str();
    app->add_option("--window-sigma", window_sigma, "Structure tensor window sigma (0 = 3x3 box)")
        ->capture_default_str();
  }

  DetectorConfig resolve() const {
    DetectorConfig c;
    c.algo = detector_from_string(algo);
    c.nms_size = nms;
    c.k = k;
    c.fast_threshold = fast_threshold;
    c.quality = quality;
    c.corner.harris_k = harris_k;
    c.corner.window_sigma = window_sigma;
    if (nms < 0) fail(ErrorCode::kUsage, "--nms must be >= 0");
    if (k < 1) fail(ErrorCode::kUsage, "--k must be >= 1");
    return c;
  }

  json to_json() const {
    return {{"algo", algo},         {"nms", nms},           {"k", k},
            {"fast_threshold", fast_threshold}, {"quality", quality}, {"harris_k", harris_k},
            {"window_sigma", window_sigma}};
  }
};

struct FitModelOpts {
  std::string table;
  double focal = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  std::optional<double> undist_cx;
  std::optional<double> undist_cy;
  int order = 4;
  int width = 0;
  int height = 0;
  std::optional<double> theta_max;
};

struct BakeOpts {
  std::string model;
  int count = 2000;
  double rot_deg = 30.0;
  double trans = 0.3;
};

struct WarpOpts {
  std::string lut;
  int index = 0;
  std::vector<std::string> images;
};

struct DetectOpts {
  DetectorFlags det;
  std::string size = "native";
  bool response = false;
  std::vector<std::string> images;
};

struct DescribeOpts {
  DetectorFlags det;
  std::string keypoints;
  std::optional<std::uint64_t> pattern_seed;
  std::string size = "native";
  std::vector<std::string> images;
};

struct MatchOpts {
  std::vector<std::string> files;
};

struct AdaptOpts {
  std::string model;
  std::string lut;
  int lut_first = 0;
  int n_warps = 100;
  DetectorFlags det;
  double threshold = 0.5;
  int vote_radius = 1;
  int border_margin = 4;
  std::string accumulation = "point-vote";
  bool no_identity = false;
  int rounds = 1;
  int superset_nms = 4;
  int superset_k = 300;
  std::string size = "model";
  std::string corpus;
  int stride = 1;
  int limit = 0;
  std::vector<std::string> images;
};

struct TestsetOpts {
  std::string mode = "illumination";
  int count = 0;
  std::string corpus;
  int stride = 1;
  int limit = 0;
  std::string lut;
  int lut_first = 0;
  std::string model;
  std::string size;
  double gamma_min = 0.1;
  double gamma_max = 2.0;
  std::vector<std::string> images;
};

struct EvalOpts {
  std::string testset;
  std::string metric = "all";
  std::string algos = "harris";
  std::string nms = "4";
  int k = 300;
  double epsilon = 3.0;
  DetectorFlags det;
  std::string external_a;
  std::string external_b;
  std::string adapt_lut;
  int adapt_first = 0;
  int n_warps = 100;
  double adapt_threshold = 0.5;
  int ransac_iters = 2000;
  double ransac_threshold = 3.0;
  bool one_way = false;
  std::optional<std::uint64_t> pattern_seed;
};

struct ReportOpts {
  std::vector<std::string> csvs;
};

// ---------------------------------------------------------------------------
// Subcommand bodies

void cmd_fit_model(const FitModelOpts& o, const Globals& g, std::ostream& out, std::ostream& err) {
  Run run("fit-model", g);
  run.input_file(o.table);
  const auto table = read_remap_table(o.table);
  RemapFitOptions opt;
  opt.focal = o.focal;
  opt.principal_point = {o.cx, o.cy};
  if (o.undist_cx || o.undist_cy) {
    if (!(o.undist_cx && o.undist_cy)) fail(ErrorCode::kUsage, "--undist-cx and --undist-cy go together");
    opt.undistorted_center = PixelPoint{*o.undist_cx, *o.undist_cy};
  }
  opt.order = o.order;
  opt.width = o.width;
  opt.height = o.height;
  opt.theta_max = o.theta_max;
  const RemapFitResult res = fit_from_remap_table(table, opt);
  save_model((run.out() / "model.json").string(), res.model);
  if (!res.fit.monotonic) err << "warning: fitted polynomial is not monotonic over the sampled range\n";

  run.config() = {{"table", o.table},   {"focal", o.focal},   {"cx", o.cx},         {"cy", o.cy},
                  {"order", o.order},   {"width", res.model.width()}, {"height", res.model.height()},
                  {"undist_cx", o.undist_cx ? json(*o.undist_cx) : json(nullptr)},
                  {"undist_cy", o.undist_cy ? json(*o.undist_cy) : json(nullptr)},
                  {"theta_max", o.theta_max ? json(*o.theta_max) : json(nullptr)}};
  run.manifest()["fit"] = {{"rms_residual", res.fit.rms_residual},
                           {"monotonic", res.fit.monotonic},
                           {"samples_used", res.samples_used},
                           {"model_hash", to_hex(res.model.digest())}};
  run.manifest()["outputs"] = {"model.json"};
  run.write();
  out << "model.json: order " << res.model.order() << ", rms residual " << res.fit.rms_residual << " px, "
      << res.samples_used << " samples\n";
}

void cmd_bake_luts(const BakeOpts& o, const Globals& g, std::ostream& out) {
  Run run("bake-luts", g);
  run.input_file(o.model);
  const FisheyeModel model = load_model(o.model);
  const SamplingRanges ranges{o.rot_deg, o.trans};
  if (o.count < 1) fail(ErrorCode::kUsage, "--count must be >= 1");

  // Bake and write in blocks so memory stays bounded for large sets.
  LutSetManifest all;
  const int block = std::max(1, 4 * resolve_threads(g.threads));
  sample_transform(g.seed, 0, ranges);
  for (int start = 0; start < o.count; start += block) {
    const int n = std::min(block, o.count - start);
    std::vector<LutPair> luts(static_cast<std::size_t>(n));
    parallel_for(luts.size(), g.threads, [&](std::size_t j) {
      const RigidTransform T = sample_transform(g.seed, static_cast<std::uint64_t>(start) + j, ranges);
      luts[j].forward = bake_warp_field(model, T, WarpDirection::kForward);
      luts[j].inverse = bake_warp_field(model, T, WarpDirection::kInverse);
    });
    for (int j = 0; j < n; ++j) {
      const int i = start + j;
      char name[64];
      std::snprintf(name, sizeof name, "lut_%05d_fwd.fwrp", i);
      save_warp_field((run.out() / name).string(), luts[static_cast<std::size_t>(j)].forward);
      all.forward_files.emplace_back(name);
      std::snprintf(name, sizeof name, "lut_%05d_inv.fwrp", i);
      save_warp_field((run.out() / name).string(), luts[static_cast<std::size_t>(j)].inverse);
      all.inverse_files.emplace_back(name);
      all.transforms.push_back(luts[static_cast<std::size_t>(j)].forward.transform);
    }
  }
  all.seed = g.seed;
  all.ranges = ranges;
  all.count = o.count;
  all.model_hash_hex = to_hex(model.digest());
  all.model_json = model_to_json(model);

  run.config() = {{"model", o.model}, {"count", o.count}, {"rot_deg", o.rot_deg}, {"trans", o.trans}};
  run.manifest()["lut_set"] = json::parse(lut_manifest_to_json(all));
  run.write();
  out << o.count << " LUT pairs written to " << g.out << "\n";
}

void cmd_warp(const WarpOpts& o, const Globals& g, bool inverse, std::ostream& out) {
  Run run(inverse ? "unwarp" : "warp", g);
  run.input_dir(o.lut);
  const LutSetManifest m = lut_manifest_from_json(read_text(fs::path(o.lut) / "manifest.json"));
  if (o.index < 0 || o.index >= m.count) fail(ErrorCode::kRange, "--index outside the LUT set");
  const auto idx = static_cast<std::size_t>(o.index);
  const WarpField field =
      inverse ? load_warp_field((fs::path(o.lut) / m.inverse_files[idx]).string(), WarpDirection::kInverse)
              : load_warp_field((fs::path(o.lut) / m.forward_files[idx]).string(), WarpDirection::kForward);
  std::set<std::string> seen;
  json outputs = json::array();
  if (o.images.empty()) fail(ErrorCode::kEmptyDataset, "no input images");
  for (const auto& path : o.images) {
    run.input_file(path);
    const ImageU8 img = load_image(path);
    const std::string stem = unique_stem(path, seen);
    const std::string ext = fs::path(path).extension().string();
    const std::string name = stem + ext;
    save_image((run.out() / name).string(), apply_warp(img, field));
    ImageU8 valid = valid_mask(field);
    for (auto& v : valid.pixels()) v = v ? 255 : 0;
    save_pgm((run.out() / (stem + "_valid.pgm")).string(), valid);
    outputs.push_back(name);
    outputs.push_back(stem + "_valid.pgm");
  }
  run.config() = {{"lut", o.lut}, {"index", o.index}, {"direction", inverse ? "inverse" : "forward"}};
  run.manifest()["outputs"] = outputs;
  run.write();
  out << o.images.size() << " image(s) " << (inverse ? "unwarped" : "warped") << " with LUT " << o.index << "\n";
}

void cmd_detect(const DetectOpts& o, const Globals& g, std::ostream& out) {
  Run run("detect", g);
  const DetectorConfig cfg = o.det.resolve();
  const Size size = parse_size(o.size);
  if (o.images.empty()) fail(ErrorCode::kEmptyDataset, "no input images");
  std::set<std::string> seen;
  std::vector<std::string> stems;
  for (const auto& p : o.images) {
    run.input_file(p);
    stems.push_back(unique_stem(p, seen));
  }
  std::vector<KeypointSet> results(o.images.size());
  std::vector<ImageF32> responses(o.response ? o.images.size() : 0);
  parallel_for(o.images.size(), g.threads, [&](std::size_t i) {
    const ImageF32 img = to_float(load_resized(o.images[i], size));
    results[i] = detect(img, cfg);
    if (o.response) responses[i] = response_map(img, cfg);
  });
  json outputs = json::array();
  for (std::size_t i = 0; i < results.size(); ++i) {
    write_keypoints_csv((run.out() / (stems[i] + ".csv")).string(), results[i]);
    outputs.push_back(stems[i] + ".csv");
    if (o.response) {
      // Heat map scaled to the response range.
      const auto px = responses[i].pixels();
      const auto [lo, hi] = std::minmax_element(px.begin(), px.end());
      ImageF32 scaled(responses[i].width(), responses[i].height(), 0.0f);
      if (*hi > *lo) {
        auto dst = scaled.pixels();
        for (std::size_t j = 0; j < px.size(); ++j) dst[j] = (px[j] - *lo) / (*hi - *lo);
      }
      save_pgm((run.out() / (stems[i] + "_response.pgm")).string(), to_u8(scaled));
      outputs.push_back(stems[i] + "_response.pgm");
    }
    out << stems[i] << ": " << results[i].size() << " keypoints\n";
  }
  run.config() = o.det.to_json();
  run.config()["size"] = size.str();
  run.manifest()["outputs"] = outputs;
  run.write();
}

void cmd_describe(const DescribeOpts& o, const Globals& g, std::ostream& out) {
  Run run("describe", g);
  const Size size = parse_size(o.size);
  if (o.images.empty()) fail(ErrorCode::kEmptyDataset, "no input images");
  if (!o.keypoints.empty() && o.images.size() != 1) {
    fail(ErrorCode::kUsage, "--keypoints applies to a single image");
  }
  const std::uint64_t pattern_seed = o.pattern_seed.value_or(g.seed);
  const BriefPattern pattern = make_brief_pattern(pattern_seed);
  std::optional<DetectorConfig> cfg;
  if (o.keypoints.empty()) cfg = o.det.resolve();
  std::set<std::string> seen;
  json outputs = json::array();
  for (const auto& path : o.images) {
    run.input_file(path);
    const std::string stem = unique_stem(path, seen);
    const ImageU8 img = load_resized(path, size);
    KeypointSet kps;
    if (cfg) {
      kps = detect(to_float(img), *cfg);
    } else {
      run.input_file(o.keypoints);
      kps = read_keypoints_csv(o.keypoints);
    }
    const DescribedKeypoints d = describe_brief(img, kps, pattern);
    save_descriptors((run.out() / (stem + ".fdsc")).string(), d.descriptors);
    write_keypoints_csv((run.out() / (stem + "_keypoints.csv")).string(), d.keypoints);
    outputs.push_back(stem + ".fdsc");
    outputs.push_back(stem + "_keypoints.csv");
    out << stem << ": " << d.descriptors.count << " descriptors (" << kps.size() - d.keypoints.size()
        << " dropped at the border)\n";
  }
  run.config() = {{"pattern_seed", pattern_seed}, {"size", size.str()}, {"keypoints", o.keypoints}};
  if (cfg) run.config()["detector"] = o.det.to_json();
  run.manifest()["outputs"] = outputs;
  run.write();
}

void cmd_match(const MatchOpts& o, const Globals& g, std::ostream& out) {
  Run run("match", g);
  if (o.files.size() != 2) fail(ErrorCode::kUsage, "match takes exactly two descriptor files");
  run.input_file(o.files[0]);
  run.input_file(o.files[1]);
  const MatchSet m = match_nn(load_descriptors(o.files[0]), load_descriptors(o.files[1]));
  write_matches_csv((run.out() / "matches.csv").string(), m);
  run.config() = {{"a", o.files[0]}, {"b", o.files[1]}, {"ratio_test", false}, {"cross_check", false}};
  run.manifest()["outputs"] = {"matches.csv"};
  run.write();
  out << m.size() << " matches\n";
}

std::shared_ptr<const FisheyeModel> model_for_luts(const std::string& model_path, const LutSetManifest& m,
                                                   Run& run) {
  std::shared_ptr<const FisheyeModel> model;
  if (!model_path.empty()) {
    run.input_file(model_path);
    model = std::make_shared<const FisheyeModel>(load_model(model_path));
    if (!m.model_hash_hex.empty() && to_hex(model->digest()) != m.model_hash_hex) {
      fail(ErrorCode::kFormat, "model does not match the one the LUT set was baked for");
    }
  } else if (!m.model_json.empty()) {
    model = std::make_shared<const FisheyeModel>(model_from_json(m.model_json));
  } else {
    fail(ErrorCode::kUsage, "--model is required: the LUT manifest does not embed one");
  }
  return model;
}

void cmd_adapt(const AdaptOpts& o, const Globals& g, std::ostream& out) {
  Run run("adapt", g);
  run.input_dir(o.lut);
  LutSetManifest m = lut_manifest_from_json(read_text(fs::path(o.lut) / "manifest.json"));
  const auto model = model_for_luts(o.model, m, run);
  if (o.n_warps < 1) fail(ErrorCode::kUsage, "--n-warps must be >= 1");
  const std::vector<LutPair> luts = load_lut_range(o.lut, o.lut_first, o.n_warps);

  AdaptationConfig cfg;
  cfg.n_warps = o.n_warps;
  cfg.include_identity = !o.no_identity;
  cfg.accumulation = accumulation_from_string(o.accumulation);
  cfg.vote_radius = o.vote_radius;
  cfg.superset_threshold = o.threshold;
  cfg.nms_size = o.superset_nms;
  cfg.k = o.superset_k;
  cfg.border_margin = o.border_margin;
  cfg.threads = g.threads;
  cfg.validate();
  const BaseDetector base = builtin_detector(o.det.resolve());

  Size size;
  if (o.size == "model") {
    size = {model->width(), model->height()};
  } else {
    size = parse_size(o.size);
  }
  const auto images = collect_images(o.images, o.corpus, o.stride, o.limit);
  for (const auto& p : images) run.input_file(p);

  run.config() = {{"lut", o.lut},
                  {"lut_first", o.lut_first},
                  {"base_detector", o.det.to_json()},
                  {"size", size.str()},
                  {"corpus", o.corpus},
                  {"stride", o.stride},
                  {"limit", o.limit}};
  CorpusOptions copt;
  copt.out_dir = g.out;
  copt.seed = m.seed;
  copt.rounds = o.rounds;
  copt.width = size.width;
  copt.height = size.height;
  copt.manifest_extra_json = run.manifest().dump();
  const auto labels = adapt_corpus(images, base, *model, luts, cfg, copt);
  out << labels.size() << " label file(s) written to " << g.out << "\n";
}

void cmd_make_testset(const TestsetOpts& o, const Globals& g, std::ostream& out) {
  Run run("make-testset", g);
  TestSetOptions topt;
  topt.mode = test_mode_from_string(o.mode);
  topt.seed = g.seed;
  topt.gamma_lo = o.gamma_min;
  topt.gamma_hi = o.gamma_max;

  std::vector<LutPair> luts;
  std::shared_ptr<const FisheyeModel> model;
  Size size;
  if (topt.mode == TestMode::kViewpoint) {
    if (o.lut.empty()) fail(ErrorCode::kUsage, "viewpoint test sets need --lut");
    run.input_dir(o.lut);
    const LutSetManifest m = lut_manifest_from_json(read_text(fs::path(o.lut) / "manifest.json"));
    model = model_for_luts(o.model, m, run);
    size = o.size.empty() ? Size{model->width(), model->height()} : parse_size(o.size);
  } else {
    size = parse_size(o.size.empty() ? "512x512" : o.size);
  }

  const auto paths = collect_images(o.images, o.corpus, o.stride, o.limit);
  const std::size_t count = o.count > 0 ? static_cast<std::size_t>(o.count) : paths.size();
  std::vector<ImageU8> base;
  std::vector<std::string> sources;
  std::set<std::string> hashed;
  for (std::size_t i = 0; i < count; ++i) {
    const std::string& p = paths[i % paths.size()];
    if (hashed.insert(p).second) run.input_file(p);
    base.push_back(load_resized(p, size));
    sources.push_back(p);
  }
  if (topt.mode == TestMode::kViewpoint) {
    // Pair i uses held-out LUT lut_first + (i mod available).
    const LutSetManifest full = lut_manifest_from_json(read_text(fs::path(o.lut) / "manifest.json"));
    const int available = full.count - o.lut_first;
    luts = load_lut_range(o.lut, o.lut_first, static_cast<int>(std::min<std::size_t>(count, std::max(available, 1))));
  }
  std::vector<TestPair> pairs = make_testset(base, topt, luts, model);
  for (std::size_t i = 0; i < pairs.size(); ++i) pairs[i].source = sources[i];

  run.config() = {{"mode", o.mode},       {"count", count},       {"size", size.str()},
                  {"gamma_min", o.gamma_min}, {"gamma_max", o.gamma_max}, {"lut", o.lut},
                  {"lut_first", o.lut_first}};
  if (topt.mode == TestMode::kViewpoint) {
    // LUTs used here must be disjoint from any training (adaptation) range.
    run.config()["held_out_luts"] = {o.lut_first, o.lut_first + static_cast<int>(luts.size()) - 1};
  }
  save_testset(g.out, pairs, topt, run.manifest().dump());
  out << pairs.size() << " " << o.mode << " pair(s) written to " << g.out << "\n";
}

void cmd_eval(const EvalOpts& o, const Globals& g, std::ostream& out) {
  Run run("eval", g);
  if (o.metric != "all" && o.metric != "repeatability" && o.metric != "matching" && o.metric != "homography") {
    fail(ErrorCode::kUsage, "--metric must be repeatability, matching, homography or all");
  }
  run.input_dir(o.testset);
  const std::vector<TestPair> pairs = load_testset(o.testset);
  const std::uint64_t pattern_seed = o.pattern_seed.value_or(g.seed);

  EvalConfig base_cfg;
  base_cfg.epsilon = o.epsilon;
  base_cfg.k = o.k;
  base_cfg.ransac.iterations = o.ransac_iters;
  base_cfg.ransac.threshold = o.ransac_threshold;
  base_cfg.ransac.seed = g.seed;
  base_cfg.brief_seed = pattern_seed;
  base_cfg.threads = g.threads;
  base_cfg.repeatability_mode = o.one_way ? RepeatabilityMode::kOneWay : RepeatabilityMode::kSymmetric;

  std::vector<int> nms_values;
  for (const auto& s : split_list(o.nms)) {
    try {
      nms_values.push_back(std::stoi(s));
    } catch (const std::exception&) {
      fail(ErrorCode::kUsage, "--nms takes a comma-separated list of integers");
    }
  }
  if (nms_values.empty()) fail(ErrorCode::kUsage, "--nms is empty");

  std::vector<EvalReport> reports;
  const bool external = !o.external_a.empty() || !o.external_b.empty();
  if (external) {
    if (o.external_a.empty() || o.external_b.empty()) {
      fail(ErrorCode::kUsage, "--external-a and --external-b go together");
    }
    std::vector<ExternalPairFiles> files;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "pair_%05zu", i);
      ExternalPairFiles f{(fs::path(o.external_a) / (std::string(name) + ".csv")).string(),
                          (fs::path(o.external_a) / (std::string(name) + ".fdsc")).string(),
                          (fs::path(o.external_b) / (std::string(name) + ".csv")).string(),
                          (fs::path(o.external_b) / (std::string(name) + ".fdsc")).string()};
      for (const auto* p : {&f.keypoints_a, &f.descriptors_a, &f.keypoints_b, &f.descriptors_b}) {
        run.input_file(*p);
      }
      files.push_back(std::move(f));
    }
    EvalConfig cfg = base_cfg;
    cfg.nms_size = nms_values.front();
    reports.push_back(run_benchmark(pairs, external_features(std::move(files)), cfg, "external"));
  } else {
    std::shared_ptr<const std::vector<LutPair>> adapt_luts;
    std::shared_ptr<const FisheyeModel> adapt_model;
    if (!o.adapt_lut.empty()) {
      run.input_dir(o.adapt_lut);
      const LutSetManifest m = lut_manifest_from_json(read_text(fs::path(o.adapt_lut) / "manifest.json"));
      adapt_model = model_for_luts("", m, run);
      adapt_luts = std::make_shared<const std::vector<LutPair>>(load_lut_range(o.adapt_lut, o.adapt_first, o.n_warps));
    }
    for (const auto& algo : split_list(o.algos)) {
      for (int nms : nms_values) {
        DetectorFlags flags = o.det;
        flags.algo = algo;
        flags.nms = nms;
        flags.k = o.k;
        const DetectorConfig det = flags.resolve();
        EvalConfig cfg = base_cfg;
        cfg.nms_size = nms;
        if (adapt_luts) {
          AdaptationConfig acfg;
          acfg.n_warps = o.n_warps;
          acfg.superset_threshold = o.adapt_threshold;
          acfg.nms_size = nms;
          acfg.k = o.k;
          // Pairs already run in parallel.
          acfg.threads = 1;
          reports.push_back(run_benchmark(
              pairs, adapted_features(builtin_detector(det), adapt_model, adapt_luts, acfg, pattern_seed), cfg,
              "adapt+" + algo));
        } else {
          reports.push_back(run_benchmark(pairs, builtin_features(det, pattern_seed), cfg, algo));
        }
      }
    }
  }
  const EvalReport report = merge_reports(reports);
  write_text(run.out() / "report.csv", report_csv(report));
  write_text(run.out() / "report.json", report_json(report));

  run.config() = {{"testset", o.testset},
                  {"metric", o.metric},
                  {"algorithms", external ? json::array({"external"}) : json(split_list(o.algos))},
                  {"nms", nms_values},
                  {"k", o.k},
                  {"epsilon", o.epsilon},
                  {"detector", o.det.to_json()},
                  {"pattern_seed", pattern_seed},
                  {"repeatability", o.one_way ? "one-way" : "symmetric"},
                  {"ransac", {{"iterations", o.ransac_iters}, {"threshold", o.ransac_threshold}, {"seed", g.seed}}},
                  {"adapt_lut", o.adapt_lut},
                  {"adapt_first", o.adapt_first},
                  {"n_warps", o.n_warps},
                  {"adapt_threshold", o.adapt_threshold}};
  run.manifest()["outputs"] = {"report.csv", "report.json"};
  run.write();

  for (const auto& a : report.aggregates()) {
    out << a.algorithm << " " << a.condition << " nms=" << a.nms << " k=" << a.k << ":";
    if (o.metric == "all" || o.metric == "repeatability") out << " repeatability=" << fmt_real(a.repeatability);
    if (o.metric == "all" || o.metric == "matching") out << " m_c=" << fmt_real(a.m_c) << " rmse=" << fmt_real(a.rmse);
    if (o.metric == "all" || o.metric == "homography") out << " h_c=" << fmt_real(a.h_c);
    if (a.failed) out << " failed=" << a.failed;
    out << "\n";
  }
}

void cmd_report(const ReportOpts& o, const Globals& g, std::ostream& out) {
  Run run("report", g);
  if (o.csvs.empty()) fail(ErrorCode::kUsage, "report needs at least one CSV");
  std::vector<EvalReport> reports;
  for (const auto& p : o.csvs) {
    run.input_file(p);
    reports.push_back(read_report_csv(p));
  }
  const EvalReport merged = merge_reports(reports);
  write_text(run.out() / "report.csv", report_csv(merged));
  write_text(run.out() / "summary.json", report_json(merged));
  run.config() = {{"inputs", o.csvs}};
  run.manifest()["outputs"] = {"report.csv", "summary.json"};
  run.write();

  out << "Repeatability\n";
  for (const auto& a : merged.aggregates()) {
    out << "  " << a.algorithm << " " << a.condition << " nms=" << a.nms << ": " << fmt_real(a.repeatability)
        << "\n";
  }
  out << "Correctness (H_c, M_c, RMSE)\n";
  for (const auto& a : merged.aggregates()) {
    out << "  " << a.algorithm << " " << a.condition << " nms=" << a.nms << ": " << fmt_real(a.h_c) << " "
        << fmt_real(a.m_c) << " " << fmt_real(a.rmse) << "\n";
  }
}

void report_error(std::ostream& err, std::string_view code, const std::string& message) {
  err << "error[" << code << "]: " << message << "\n";
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fisheye keypoint benchmark tools", "fkb"};
  app.set_version_flag("--version", FKB_VERSION);
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  if (const char* env = std::getenv("FKB_THREADS")) {
    try {
      g.threads = std::stoi(env);
    } catch (const std::exception&) {
      report_error(err, "UsageError", "FKB_THREADS must be an integer");
      return kExitUsage;
    }
  }
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores; env FKB_THREADS)")->capture_default_str();
  app.add_option("--out", g.out, "Output directory (receives manifest.json)");

  FitModelOpts fit;
  auto* s_fit = app.add_subcommand("fit-model", "Fit a polynomial model to a distorted/undistorted remap table");
  s_fit->add_option("--table", fit.table, "CSV u_dist,v_dist,u_undist,v_undist")->required();
  s_fit->add_option("--focal", fit.focal, "Pinhole focal length of the undistorted image (px)")->required();
  s_fit->add_option("--cx", fit.cx, "Principal point x")->required();
  s_fit->add_option("--cy", fit.cy, "Principal point y")->required();
  s_fit->add_option("--undist-cx", fit.undist_cx, "Undistorted image centre x");
  s_fit->add_option("--undist-cy", fit.undist_cy, "Undistorted image centre y");
  s_fit->add_option("--order", fit.order, "Polynomial order")->capture_default_str();
  s_fit->add_option("--width", fit.width, "Image width (0 = from the table)")->capture_default_str();
  s_fit->add_option("--height", fit.height, "Image height (0 = from the table)")->capture_default_str();
  s_fit->add_option("--theta-max", fit.theta_max, "Valid incidence angle bound (rad)");

  BakeOpts bake;
  auto* s_bake = app.add_subcommand("bake-luts", "Sample virtual camera moves and bake warp fields");
  s_bake->add_option("--model", bake.model, "Model JSON")->required();
  s_bake->add_option("--count", bake.count, "Number of LUT pairs")->capture_default_str();
  s_bake->add_option("--rot-deg", bake.rot_deg, "Rotation range, degrees per axis")->capture_default_str();
  s_bake->add_option("--trans", bake.trans, "Translation range per axis")->capture_default_str();

  WarpOpts warp;
  auto* s_warp = app.add_subcommand("warp", "Apply a forward warp field to images");
  WarpOpts unwarp;
  auto* s_unwarp = app.add_subcommand("unwarp", "Apply an inverse warp field to images");
  for (auto [sub, o] : {std::pair{s_warp, &warp}, std::pair{s_unwarp, &unwarp}}) {
    sub->add_option("--lut", o->lut, "LUT set directory")->required();
    sub->add_option("--index", o->index, "LUT pair index")->capture_default_str();
    sub->add_option("images", o->images, "Input images")->required();
  }

  DetectOpts det;
  auto* s_det = app.add_subcommand("detect", "Detect keypoints (NMS + top-k)");
  det.det.add(s_det);
  s_det->add_option("--size", det.size, "Resize to WxH before detection, or 'native'")->capture_default_str();
  s_det->add_flag("--response", det.response, "Also write the response map as a PGM heat map");
  s_det->add_option("images", det.images, "Input images")->required();

  DescribeOpts desc;
  auto* s_desc = app.add_subcommand("describe", "Compute BRIEF descriptors");
  desc.det.add(s_desc);
  s_desc->add_option("--keypoints", desc.keypoints, "Keypoint CSV (default: detect)");
  s_desc->add_option("--pattern-seed", desc.pattern_seed, "BRIEF pattern seed (default: --seed)");
  s_desc->add_option("--size", desc.size, "Resize to WxH first, or 'native'")->capture_default_str();
  s_desc->add_option("images", desc.images, "Input images")->required();

  MatchOpts match;
  auto* s_match = app.add_subcommand("match", "Nearest-neighbour matching of two descriptor files");
  s_match->add_option("files", match.files, "Descriptor files A and B")->required()->expected(2);

  AdaptOpts adapt;
  auto* s_adapt = app.add_subcommand("adapt", "Build keypoint supersets by adaptation over random warps");
  s_adapt->add_option("--model", adapt.model, "Model JSON (default: the one embedded in the LUT set)");
  s_adapt->add_option("--lut", adapt.lut, "LUT set directory")->required();
  s_adapt->add_option("--lut-first", adapt.lut_first, "First LUT pair to use")->capture_default_str();
  s_adapt->add_option("--n-warps", adapt.n_warps, "Number of warps")->capture_default_str();
  adapt.det.add(s_adapt, "--base-algo");
  s_adapt->add_option("--threshold", adapt.threshold, "Superset threshold")->capture_default_str();
  s_adapt->add_option("--vote-radius", adapt.vote_radius, "Vote radius (px)")->capture_default_str();
  s_adapt->add_option("--border-margin", adapt.border_margin, "Ignore detections this close to invalid pixels")
      ->capture_default_str();
  s_adapt->add_option("--accumulation", adapt.accumulation, "point-vote or heatmap")->capture_default_str();
  s_adapt->add_flag("--no-identity", adapt.no_identity, "Do not include the unwarped image");
  s_adapt->add_option("--rounds", adapt.rounds, "Adaptation rounds")->capture_default_str();
  s_adapt->add_option("--superset-nms", adapt.superset_nms, "NMS half window for the superset")
      ->capture_default_str();
  s_adapt->add_option("--superset-k", adapt.superset_k, "Superset size cap")->capture_default_str();
  s_adapt->add_option("--size", adapt.size, "Resize to WxH, 'native' or 'model'")->capture_default_str();
  s_adapt->add_option("--corpus", adapt.corpus, "Image directory or path list file");
  s_adapt->add_option("--stride", adapt.stride, "Take every n-th image of a corpus directory")
      ->capture_default_str();
  s_adapt->add_option("--limit", adapt.limit, "Cap on corpus images (0 = all)")->capture_default_str();
  s_adapt->add_option("images", adapt.images, "Input images");

  TestsetOpts ts;
  auto* s_ts = app.add_subcommand("make-testset", "Synthesize illumination or viewpoint test pairs");
  s_ts->add_option("--mode", ts.mode, "illumination or viewpoint")->capture_default_str();
  s_ts->add_option("--count", ts.count, "Number of pairs (0 = one per image)")->capture_default_str();
  s_ts->add_option("--corpus", ts.corpus, "Image directory or path list file");
  s_ts->add_option("--stride", ts.stride, "Take every n-th image of a corpus directory")->capture_default_str();
  s_ts->add_option("--limit", ts.limit, "Cap on corpus images (0 = all)")->capture_default_str();
  s_ts->add_option("--lut", ts.lut, "Held-out LUT set directory (viewpoint)");
  s_ts->add_option("--lut-first", ts.lut_first, "First LUT pair to use")->capture_default_str();
  s_ts->add_option("--model", ts.model, "Model JSON (default: the one embedded in the LUT set)");
  s_ts->add_option("--size", ts.size, "WxH or 'native' (default 512x512; model size for viewpoint)");
  s_ts->add_option("--gamma-min", ts.gamma_min, "Lower gamma bound")->capture_default_str();
  s_ts->add_option("--gamma-max", ts.gamma_max, "Upper gamma bound")->capture_default_str();
  s_ts->add_option("images", ts.images, "Input images");

  EvalOpts ev;
  auto* s_ev = app.add_subcommand("eval", "Run the benchmark on a test set");
  s_ev->add_option("--testset", ev.testset, "Test set directory")->required();
  s_ev->add_option("--metric", ev.metric, "repeatability, matching, homography or all")->capture_default_str();
  s_ev->add_option("--algo", ev.algos, "Comma-separated detectors")->capture_default_str();
  s_ev->add_option("--nms", ev.nms, "Comma-separated NMS half windows")->capture_default_str();
  s_ev->add_option("--k", ev.k, "Keypoints per image")->capture_default_str();
  s_ev->add_option("--epsilon", ev.epsilon, "Correctness threshold (px)")->capture_default_str();
  s_ev->add_option("--fast-threshold", ev.det.fast_threshold, "FAST intensity threshold")->capture_default_str();
  s_ev->add_option("--quality", ev.det.quality, "Harris/Shi floor as a fraction of the peak")->capture_default_str();
  s_ev->add_option("--external-a", ev.external_a, "Directory with pair_NNNNN.csv/.fdsc for image A");
  s_ev->add_option("--external-b", ev.external_b, "Directory with pair_NNNNN.csv/.fdsc for image B");
  s_ev->add_option("--adapt-lut", ev.adapt_lut, "Evaluate adaptation supersets built with this LUT set");
  s_ev->add_option("--adapt-first", ev.adapt_first, "First LUT pair for adaptation")->capture_default_str();
  s_ev->add_option("--n-warps", ev.n_warps, "Warps per adaptation")->capture_default_str();
  s_ev->add_option("--adapt-threshold", ev.adapt_threshold, "Superset threshold")->capture_default_str();
  s_ev->add_option("--ransac-iters", ev.ransac_iters, "RANSAC iterations")->capture_default_str();
  s_ev->add_option("--ransac-threshold", ev.ransac_threshold, "RANSAC reprojection threshold (px)")
      ->capture_default_str();
  s_ev->add_flag("--one-way", ev.one_way, "One-directional repeatability");
  s_ev->add_option("--pattern-seed", ev.pattern_seed, "BRIEF pattern seed (default: --seed)");

  ReportOpts rep;
  auto* s_rep = app.add_subcommand("report", "Merge benchmark CSVs into repeatability and correctness summaries");
  s_rep->add_option("csvs", rep.csvs, "Report CSV files")->required();

  std::vector<std::string> storage;
  storage.reserve(args.size() + 1);
  storage.emplace_back("fkb");
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << FKB_VERSION << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    report_error(err, "UsageError", e.what());
    err << app.help();
    return kExitUsage;
  }

  try {
    if (s_fit->parsed()) cmd_fit_model(fit, g, out, err);
    else if (s_bake->parsed()) cmd_bake_luts(bake, g, out);
    else if (s_warp->parsed()) cmd_warp(warp, g, false, out);
    else if (s_unwarp->parsed()) cmd_warp(unwarp, g, true, out);
    else if (s_det->parsed()) cmd_detect(det, g, out);
    else if (s_desc->parsed()) cmd_describe(desc, g, out);
    else if (s_match->parsed()) cmd_match(match, g, out);
    else if (s_adapt->parsed()) cmd_adapt(adapt, g, out);
    else if (s_ts->parsed()) cmd_make_testset(ts, g, out);
    else if (s_ev->parsed()) cmd_eval(ev, g, out);
    else if (s_rep->parsed()) cmd_report(rep, g, out);
    return kExitOk;
  } catch (const Error& e) {
    report_error(err, to_string(e.code()), e.what());
    if (e.code() == ErrorCode::kUsage) {
      err << app.help();
      return kExitUsage;
    }
    return e.code() == ErrorCode::kInternal ? kExitInternal : kExitData;
  } catch (const std::bad_alloc&) {
    report_error(err, "InternalError", "out of memory");
    return kExitInternal;
  } catch (const std::exception& e) {
    report_error(err, "InternalError", e.what());
    return kExitInternal;
  }
}

}  // namespace fkb::cli
