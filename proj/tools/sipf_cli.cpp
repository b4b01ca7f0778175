// sipf: descriptor export, invariance audit, Bingham utilities and the toy
// wing-tip experiment.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sipf/bingham.hpp"
#include "sipf/descriptors.hpp"
#include "sipf/io.hpp"
#include "sipf/knn.hpp"
#include "sipf/lrf.hpp"
#include "sipf/riattn.hpp"
#include "sipf/trainer.hpp"
#include "sipf/wingtip.hpp"

namespace fs = std::filesystem;
using namespace sipf;
using sipf::io::json;

namespace {

enum Exit { kOk = 0, kValidation = 1, kInvariance = 2, kNumeric = 3 };

constexpr double kInvarianceTolerance = 1e-8;

struct Options {
  std::string input, config, out, mask, rotation, z1, z2;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k;
  std::size_t trials = 100;
  std::size_t n = 1000;
  bool break_shadow = false;
};

std::vector<double> parse_list(const std::string& text, std::size_t expected, const char* flag) {
  std::string s = text;
  std::replace(s.begin(), s.end(), ',', ' ');
  std::istringstream ss(s);
  std::vector<double> v;
  double x;
  while (ss >> x) v.push_back(x);
  if (!ss.eof() || v.size() != expected || !std::all_of(v.begin(), v.end(), [](double d) {
        return std::isfinite(d);
      }))
    throw Error(ErrorKind::invalid_argument, std::string(flag) + " expects " +
                                                 std::to_string(expected) + " comma-separated numbers");
  return v;
}

io::RunConfig load_config(const Options& o) {
  io::RunConfig c = o.config.empty() ? io::RunConfig{} : io::read_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.k) {
    if (*o.k < 1) throw Error(ErrorKind::invalid_argument, "--k must be >= 1");
    c.k = *o.k;
  }
  if (!o.mask.empty()) c.descriptor_mask = parse_mask(o.mask);
  return c;
}

void emit(const Options& o, const std::string& content) {
  if (o.out.empty())
    std::cout << content;
  else
    io::write_atomic(o.out, content);
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

/// --rotation if given, else the mode of a Bingham seed drawn from `seed`.
Rotation3 shadow_rotation(const Options& o, std::uint64_t seed) {
  if (!o.rotation.empty()) {
    const auto v = parse_list(o.rotation, 4, "--rotation");
    return quat_to_matrix(UnitQuaternion::normalized(Vec4(v[0], v[1], v[2], v[3])));
  }
  Rng rng(seed);
  BinghamSeed bs = BinghamSeed::random(rng);
  return quat_to_matrix(draw_shadow_quaternion(bs, rng, ShadowSource::mode));
}

int cmd_features(const Options& o) {
  const io::RunConfig cfg = load_config(o);
  const PointCloud cloud = io::read_cloud(o.input);
  const NeighborGraph graph = knn_graph(cloud, cfg.k);
  const FrameMode mode = default_frame_mode(cloud);
  const Vec3 centroid = cloud.centroid();

  std::vector<std::optional<LocalFrame>> frames(cloud.size());
  std::size_t bad_frames = 0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    try {
      frames[i] = build_point_lrf(cloud, graph, centroid, i, mode);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::degenerate_frame && e.kind() != ErrorKind::degenerate_geometry)
        throw;
      std::cerr << "warning: " << e.what() << "\n";
      ++bad_frames;
    }
  }

  const Rotation3 rg = shadow_rotation(o, cfg.seed);
  std::vector<io::DescriptorRow> rows;
  std::size_t omitted = 0;
  for (std::size_t r = 0; r < cloud.size(); ++r) {
    for (std::size_t j = 0; j < graph.k(); ++j) {
      const std::size_t nb = graph(r, j);
      if (!frames[r] || !frames[nb]) {
        ++omitted;
        continue;
      }
      const OrientedPoint ref{cloud.point(r), *frames[r]};
      const OrientedPoint sh{rotate(cloud.point(r), rg), frames[r]->rotated(rg)};
      try {
        rows.push_back({r, nb, compute_sipf(ref, {cloud.point(nb), *frames[nb]}, sh, cfg.descriptor_mask)});
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::coincident_point) throw;
        std::cerr << "warning: " << e.at(r).what() << "\n";
        ++omitted;
      }
    }
  }
  if (bad_frames + omitted > 0)
    std::cerr << "warning: " << bad_frames << " degenerate frames, " << omitted
              << " rows omitted\n";
  emit(o, io::descriptor_csv(rows));
  return kOk;
}

// Max |Δ| over every SiPF stack and over a random layer's output when the
// cloud is rotated by R and the shadow rotation conjugated to Rᵀ R_g R.
int cmd_verify_invariance(const Options& o) {
  if (o.trials == 0) throw Error(ErrorKind::invalid_argument, "--trials must be >= 1");
  const io::RunConfig cfg = load_config(o);
  const PointCloud cloud = io::read_cloud(o.input);
  const FrameMode mode = default_frame_mode(cloud);
  const Rotation3 rg = shadow_rotation(o, cfg.seed);

  Rng rng(cfg.seed);
  const RIAttnLayer layer = RIAttnLayer::random(3, cfg.c_out, rng, cfg.hidden);

  auto evaluate = [&](const PointCloud& c, const Rotation3& shadow_rot) {
    const NeighborGraph graph = knn_graph(c, cfg.k);
    const auto frames = build_all_lrfs(c, graph, mode);
    const auto desc = input_descriptor(c, frames);
    MatrixXd features(static_cast<Eigen::Index>(c.size()), 3);
    for (std::size_t i = 0; i < desc.size(); ++i)
      features.row(static_cast<Eigen::Index>(i)) << desc[i].radius, desc[i].sin, desc[i].cos;
    auto stacks = sipf_stacks(c, frames, graph, shadow_of(c, frames, shadow_rot), cfg.descriptor_mask);
    MatrixXd out = riattnconv_forward(stacks, graph, features, layer).out;
    return std::make_pair(std::move(stacks), std::move(out));
  };

  const auto base = evaluate(cloud, rg);
  double max_desc = 0.0, max_layer = 0.0;
  for (std::size_t t = 0; t < o.trials; ++t) {
    const Rotation3 r = random_rotation(rng);
    const Rotation3 rg_t = o.break_shadow ? rg : r.transpose() * rg * r;
    const auto cur = evaluate(apply_rotation(cloud, r), rg_t);
    for (std::size_t i = 0; i < cur.first.size(); ++i)
      max_desc = std::max(max_desc, (cur.first[i] - base.first[i]).cwiseAbs().maxCoeff());
    max_layer = std::max(max_layer, (cur.second - base.second).cwiseAbs().maxCoeff());
  }
  const bool pass = max_desc <= kInvarianceTolerance && max_layer <= kInvarianceTolerance;
  json j{{"trials", o.trials},
         {"descriptor_mask", std::string(to_string(cfg.descriptor_mask))},
         {"break_shadow", o.break_shadow},
         {"max_sipf_deviation", max_desc},
         {"max_layer_deviation", max_layer},
         {"tolerance", kInvarianceTolerance},
         {"pass", pass}};
  emit(o, dump(j));
  return pass ? kOk : kInvariance;
}

BinghamSeed bingham_seed(const Options& o, Rng& rng) {
  if (o.z1.empty() != o.z2.empty())
    throw Error(ErrorKind::invalid_argument, "--z1 and --z2 must be given together");
  if (o.z1.empty()) return BinghamSeed::random(rng);
  const auto a = parse_list(o.z1, 4, "--z1");
  const auto b = parse_list(o.z2, 3, "--z2");
  return {Vec4(a[0], a[1], a[2], a[3]), Vec3(b[0], b[1], b[2])};
}

json vec_json(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

int cmd_bingham(const Options& o, const std::string& what) {
  const io::RunConfig cfg = load_config(o);
  Rng rng(cfg.seed);
  const BinghamSeed seed = bingham_seed(o, rng);
  const BinghamParams params = BinghamParams::from_seed(seed);

  if (what == "sample") {
    if (o.n == 0) throw Error(ErrorKind::invalid_argument, "--n must be >= 1");
    const auto qs = sample(params, rng, o.n);
    std::string csv = "w,x,y,z\n";
    for (const auto& q : qs)
      csv += io::format_double(q.w) + "," + io::format_double(q.x) + "," + io::format_double(q.y) +
             "," + io::format_double(q.z) + "\n";
    emit(o, csv);
  } else if (what == "entropy") {
    const NormalizationResult n = normalization(params, cfg.quadrature_order);
    json j{{"lambda", vec_json(params.lambda())},
           {"F", n.F},
           {"gradF", vec_json(n.gradF)},
           {"entropy", entropy(params.lambda(), n)}};
    emit(o, dump(j));
  } else {
    const UnitQuaternion q = mode(params);
    const Mat3 m = quat_to_matrix(q).matrix();
    json rows = json::array();
    for (int i = 0; i < 3; ++i) rows.push_back(json::array({m(i, 0), m(i, 1), m(i, 2)}));
    emit(o, dump(json{{"quaternion", io::quaternion_json(q)}, {"matrix", rows}}));
  }
  return kOk;
}

std::vector<LabeledCloud> dataset_for(const io::RunConfig& cfg) {
  return make_wingtip_dataset(cfg.n_clouds, cfg.points_per_cloud, cfg.noise_sigma, cfg.seed);
}

int cmd_train_toy(const Options& o) {
  const io::RunConfig cfg = load_config(o);
  const TrainResult r = train_toy(dataset_for(cfg), cfg.toy());
  emit(o, io::metrics_log(r.log));
  return kOk;
}

int cmd_demo_wingtip(const Options& o) {
  const io::RunConfig cfg = load_config(o);
  const auto data = dataset_for(cfg);

  ToyTaskConfig full = cfg.toy();
  ToyTaskConfig ppf = full;
  ppf.mask = DescriptorMask::ppf_only;
  const TrainResult a = train_toy(data, full);
  const TrainResult b = train_toy(data, ppf);

  double ppf_worst = 0.0;
  for (const auto& m : b.log) ppf_worst = std::max(ppf_worst, m.accuracy);
  const double sipf_acc = a.log.back().accuracy;
  const bool confirmed = ppf_worst <= 0.6 && sipf_acc >= 0.95;

  json summary{{"descriptor_mask", std::string(to_string(full.mask))},
               {"epochs", full.epochs},
               {"sipf_accuracy", sipf_acc},
               {"ppf_accuracy", ppf_worst},
               {"collapse_confirmed", confirmed}};
  if (o.out.empty()) {
    std::cout << dump(summary);
  } else {
    fs::create_directories(o.out);
    const fs::path dir(o.out);
    io::write_atomic(dir / ("metrics_" + std::string(to_string(full.mask)) + ".ndjson"),
                     io::metrics_log(a.log));
    io::write_atomic(dir / "metrics_ppf.ndjson", io::metrics_log(b.log));
    io::write_atomic(dir / "summary.json", dump(summary));
  }
  return kOk;
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::numeric:
    case ErrorKind::sampler_stall:
      return kNumeric;
    default:
      return kValidation;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rotation-invariant point features with a learned shadow rotation"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    c->add_option("--seed", o.seed, "RNG seed (overrides config)");
    c->add_option("--out", o.out, "output path (stdout when omitted)");
  };
  auto add_geometry = [&](CLI::App* c) {
    c->add_option("--input", o.input, "point cloud (.xyz or ASCII .ply)")->required();
    c->add_option("--k", o.k, "neighbourhood size (overrides config)");
    c->add_option("--mask", o.mask, "sipf | ppf | sipf-no-direction");
    c->add_option("--rotation", o.rotation, "shadow rotation quaternion w,x,y,z");
  };

  auto* features = app.add_subcommand("features", "export SiPF descriptors as CSV");
  add_common(features);
  add_geometry(features);

  auto* verify = app.add_subcommand("verify-invariance", "check SiPF under random joint rotations");
  add_common(verify);
  add_geometry(verify);
  verify->add_option("--trials", o.trials, "number of random rotations");
  verify->add_flag("--break-shadow", o.break_shadow, "do not co-rotate the shadow (negative control)");

  auto* bingham = app.add_subcommand("bingham", "Bingham distribution utilities");
  bingham->require_subcommand(1);
  std::string bingham_cmd;
  for (const char* name : {"sample", "entropy", "mode"}) {
    auto* s = bingham->add_subcommand(name);
    add_common(s);
    s->add_option("--z1", o.z1, "z1 as a,b,c,d (default: random from seed)");
    s->add_option("--z2", o.z2, "z2 as a,b,c (default: random from seed)");
    if (std::string(name) == "sample") s->add_option("--n", o.n, "number of samples");
    s->callback([&bingham_cmd, name] { bingham_cmd = name; });
  }

  auto* demo = app.add_subcommand("demo-wingtip", "wing-tip collapse and rescue experiment");
  add_common(demo);
  demo->add_option("--mask", o.mask, "mask of the rescue run (default sipf)");

  auto* train = app.add_subcommand("train-toy", "train the toy segmenter, NDJSON metrics");
  add_common(train);
  train->add_option("--mask", o.mask, "sipf | ppf | sipf-no-direction");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kValidation;
  }

  try {
    if (*features) return cmd_features(o);
    if (*verify) return cmd_verify_invariance(o);
    if (*bingham) return cmd_bingham(o, bingham_cmd);
    if (*demo) return cmd_demo_wingtip(o);
    if (*train) return cmd_train_toy(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  }
  return kValidation;
}
