// Command-line front end: evaluate, associate, generate, serialize, losses.

#include <algorithm>
#include <atomic>
#include <exception>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "t4d/t4d.hpp"

namespace fs = std::filesystem;
using namespace t4d;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitUsage = 64;
constexpr int kExitData = 65;
constexpr int kExitSoftware = 70;
constexpr int kExitIo = 74;

struct ValidationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int default_threads() {
  if (const char* env = std::getenv("T4D_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::logic_error&) {
    }
    std::cerr << "warning: ignoring invalid T4D_THREADS='" << env << "'\n";
  }
  return 1;
}

std::vector<double> parse_thresholds(const std::string& spec) {
  std::vector<double> out;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "sweep") {
      const auto s = sweep_thresholds();
      out.insert(out.end(), s.begin(), s.end());
      continue;
    }
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (used == 0 || used != tok.size() || !(v > 0.0 && v < 1.0))
      throw Error(ErrorCode::invalid_argument, "bad threshold '" + tok + "'");
    out.push_back(v);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (out.empty()) throw Error(ErrorCode::invalid_argument, "no thresholds given");
  return out;
}

void check_inputs(const LoadedSequence& gt, const PredictionFile& pred) {
  if (gt.sequence.sequence_id != pred.sequence_id)
    throw ValidationFailure("sequence_id mismatch: ground truth '" + gt.sequence.sequence_id +
                            "', predictions '" + pred.sequence_id + "'");
  const auto v = validate_sequence(gt.sequence, gt.annotation, pred.instances);
  if (!v.ok()) {
    std::string msg = "input validation failed";
    for (const auto& x : v.violations) msg += "\n  " + x.message;
    throw ValidationFailure(msg);
  }
}

// --- evaluate ---------------------------------------------------------------

struct EvaluateArgs {
  std::vector<std::string> gt, pred;
  std::string thresholds = "0.25,sweep";
  bool per_change_type = false;
  std::uint64_t seed = 0;
  std::string out;
};

int run_evaluate(const EvaluateArgs& a, int threads) {
  if (a.gt.size() != a.pred.size())
    throw Error(ErrorCode::invalid_argument, "--gt and --pred must be given the same number of times");
  EvaluationOptions opt;
  opt.thresholds = parse_thresholds(a.thresholds);
  opt.seed = a.seed;

  std::vector<LoadedSequence> gts;
  std::vector<PredictionFile> preds;
  for (std::size_t i = 0; i < a.gt.size(); ++i) {
    gts.push_back(load_sequence(a.gt[i]));
    preds.push_back(read_predictions(a.pred[i]));
    check_inputs(gts.back(), preds.back());
  }

  std::vector<EvaluationReport> reports(gts.size());
  if (gts.size() == 1) {
    opt.threads = threads;
    reports[0] = evaluate(gts[0].sequence, gts[0].annotation, preds[0].to_prediction_set(), opt);
  } else {
    // One worker per sequence; each sequence is evaluated single-threaded.
    opt.threads = 1;
    std::vector<std::exception_ptr> errors(gts.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
      for (std::size_t i; (i = next++) < gts.size();) {
        try {
          reports[i] = evaluate(gts[i].sequence, gts[i].annotation, preds[i].to_prediction_set(), opt);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), gts.size());
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    std::sort(reports.begin(), reports.end(),
              [](const auto& x, const auto& y) { return x.sequence_id < y.sequence_id; });
  }

  Json out;
  if (reports.size() == 1) {
    out = report_to_json(reports[0], a.per_change_type);
  } else {
    out["schema_version"] = kSchemaVersion;
    out["sequences"] = Json::array();
    for (const auto& r : reports) out["sequences"].push_back(report_to_json(r, a.per_change_type));
  }
  write_json(a.out, out);
  for (const auto& r : reports) {
    auto fmt = [](const std::optional<double>& v) { return v ? std::to_string(round6(*v)) : std::string("n/a"); };
    std::cout << r.sequence_id << ": t_map=" << fmt(r.t_map) << " t_map50=" << fmt(r.t_map50)
              << " t_map25=" << fmt(r.t_map25) << "\n";
  }
  return kExitOk;
}

// --- associate --------------------------------------------------------------

struct AssociateArgs {
  std::string mode, pred_a, pred_b, manifest, out;
  double similarity_floor = kDefaultSimilarityFloor;
};

int run_associate(const AssociateArgs& a) {
  const auto fa = read_predictions(a.pred_a);
  const auto fb = read_predictions(a.pred_b);
  const auto sa = fa.to_stage_set();
  const auto sb = fb.to_stage_set();
  PredictionSet out;
  out.sequence_id = fa.sequence_id;
  if (a.mode == "semantic") {
    out.instances = associate_semantic(sa, sb, a.similarity_floor);
  } else {
    if (a.manifest.empty()) throw Error(ErrorCode::invalid_argument, "geometric association needs --manifest");
    const auto seq = load_sequence(a.manifest);
    out.sequence_id = seq.sequence.sequence_id;
    for (auto t : {sa.stage, sb.stage})
      if (t < 0 || t >= seq.sequence.stage_count())
        throw Error(ErrorCode::out_of_range, "stage " + std::to_string(t) + " not in the manifest");
    out.instances = associate_geometric(sa, seq.sequence.stages[static_cast<std::size_t>(sa.stage)],
                                        seq.sequence.stages[static_cast<std::size_t>(sb.stage)], sb.stage);
  }
  write_json(a.out, predictions_to_json(out));
  std::cout << "associated " << out.instances.size() << " instances\n";
  return kExitOk;
}

// --- generate ---------------------------------------------------------------

IdentityPolicy policy_from_string(const std::string& s) {
  if (s == "consistent") return IdentityPolicy::consistent;
  if (s == "swapped") return IdentityPolicy::swapped;
  if (s == "merged") return IdentityPolicy::merged;
  if (s == "fragmented") return IdentityPolicy::fragmented;
  throw Error(ErrorCode::parse_failure, "unknown identity policy '" + s + "'");
}

PerturbationSpec perturbation_from_json(const Json& j) {
  const std::string w = "perturbation";
  PerturbationSpec p;
  p.seed = detail::get_or<std::uint64_t>(j, "seed", p.seed, w);
  p.target_iou = detail::get_or<double>(j, "target_iou", p.target_iou, w);
  p.policy = policy_from_string(detail::get_or<std::string>(j, "policy", "consistent", w));
  if (j.contains("policy_groups")) p.policy_groups = j.at("policy_groups").get<std::vector<std::vector<InstanceId>>>();
  p.base_confidence = detail::get_or<double>(j, "base_confidence", p.base_confidence, w);
  p.confidence_jitter = detail::get_or<double>(j, "confidence_jitter", p.confidence_jitter, w);
  p.miss_rate = detail::get_or<double>(j, "miss_rate", p.miss_rate, w);
  p.class_flip_rate = detail::get_or<double>(j, "class_flip_rate", p.class_flip_rate, w);
  p.n_classes = detail::get_or<int>(j, "n_classes", p.n_classes, w);
  p.false_positives = detail::get_or<int>(j, "false_positives", p.false_positives, w);
  p.false_positive_size = detail::get_or<int>(j, "false_positive_size", p.false_positive_size, w);
  if (j.contains("overrides"))
    for (const auto& o : j.at("overrides"))
      p.target_overrides[{detail::get_field<InstanceId>(o, "instance_id", w),
                          detail::get_field<StageIndex>(o, "stage", w)}] = detail::get_field<double>(o, "target_iou", w);
  return p;
}

struct GenerateArgs {
  std::string recipe, out;
  bool with_predictions = false;
};

int run_generate(const GenerateArgs& a) {
  const Json rj = read_json(a.recipe);
  const auto recipe = recipe_from_json(rj);
  const auto scene = generate(recipe);
  const auto manifest = write_sequence(a.out, scene.sequence, scene.annotation);
  if (a.with_predictions || rj.contains("perturbation")) {
    const auto spec = rj.contains("perturbation") ? perturbation_from_json(rj.at("perturbation")) : PerturbationSpec{};
    const auto preds = perturb(scene.sequence, scene.annotation, spec);
    write_json(fs::path(a.out) / "predictions.json", predictions_to_json(preds));
  }
  std::cout << "wrote " << manifest.string() << " (" << scene.sequence.stage_count() << " stages, "
            << scene.annotation.instances.size() << " instances)\n";
  return kExitOk;
}

// --- serialize --------------------------------------------------------------

struct SerializeArgs {
  std::string curve, manifest, out;
  int dims = 4;
  double resolution = kDefaultVoxelResolution;
  int bits = kDefaultBitsPerAxis;
};

int run_serialize(const SerializeArgs& a) {
  const SerializationPattern pattern{curve_from_string(a.curve),
                                     a.dims == 3 ? CurveDims::spatial_3d : CurveDims::spatiotemporal_4d};
  const auto seq = load_sequence(a.manifest);
  const auto grid = voxelize(seq.sequence, a.resolution);
  const auto order = serialize_sequence(grid, pattern, a.bits);
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["sequence_id"] = seq.sequence.sequence_id;
  j["curve"] = std::string(to_string(pattern.curve));
  j["dims"] = a.dims;
  j["bits_per_axis"] = a.bits;
  j["resolution"] = round6(a.resolution);
  j["order"] = Json::array();
  for (auto v : order) {
    const auto& k = grid.keys[v];
    j["order"].push_back({k[0], k[1], k[2], k[3]});
  }
  write_json(a.out, j);
  std::cout << "serialized " << order.size() << " voxels\n";
  return kExitOk;
}

// --- losses -----------------------------------------------------------------

Matrix matrix_from_json(const Json& j, const char* key) {
  const auto rows = detail::get_field<std::vector<std::vector<double>>>(j, key, "losses input");
  return Matrix::from_rows(rows);
}

Json matrix_to_json(const Matrix& m) {
  Json out = Json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (double v : m.row(r)) row.push_back(round6(v));
    out.push_back(std::move(row));
  }
  return out;
}

struct LossesArgs {
  std::string op, in, out;
};

int run_losses(const LossesArgs& a) {
  const Json in = read_json(a.in);
  const std::string w = "losses input";
  Json out;
  out["schema_version"] = kSchemaVersion;
  out["op"] = a.op;
  if (a.op == "contrastive") {
    const auto features = matrix_from_json(in, "features");
    const auto labels = detail::get_field<std::vector<InstanceId>>(in, "labels", w);
    const auto rel = RelationMatrix::from_labels(labels);
    out["loss"] = round6(contrastive_loss(features, rel, detail::get_or<double>(in, "eps", kCosineClamp, w)));
    out["similarity"] = matrix_to_json(log_odds_similarity(features));
  } else if (a.op == "cost") {
    AssignmentCostConfig cfg;
    if (in.contains("config")) {
      const auto& c = in.at("config");
      cfg.lambda_dice = detail::get_or<double>(c, "lambda_dice", cfg.lambda_dice, w);
      cfg.lambda_bce = detail::get_or<double>(c, "lambda_bce", cfg.lambda_bce, w);
      cfg.lambda_cls = detail::get_or<double>(c, "lambda_cls", cfg.lambda_cls, w);
      cfg.lambda_no_object = detail::get_or<double>(c, "lambda_no_object", cfg.lambda_no_object, w);
    }
    const auto gt_classes = detail::get_field<std::vector<int>>(in, "gt_classes", w);
    const auto r = assignment_cost(matrix_from_json(in, "pred_masks"), matrix_from_json(in, "pred_classes"),
                                   matrix_from_json(in, "gt_masks"), gt_classes, cfg);
    out["cost"] = matrix_to_json(r.cost);
    out["matching"] = r.matching.row_to_col;
    out["matched_cost"] = round6(r.matched_cost);
    out["no_object_loss"] = round6(r.no_object_loss);
  } else if (a.op == "fourier") {
    const auto coords = matrix_from_json(in, "coords");
    const auto proj = make_fourier_projection(detail::get_or<int>(in, "dim", 16, w),
                                              detail::get_or<std::uint64_t>(in, "seed", 0, w),
                                              detail::get_or<double>(in, "sigma", kDefaultFourierScale, w));
    out["features"] = matrix_to_json(fourier_features_4d(coords, proj));
  } else if (a.op == "pool") {
    const auto stages = detail::get_field<std::vector<std::vector<std::vector<double>>>>(in, "stages", w);
    const auto point_mask = detail::get_field<std::vector<std::vector<int>>>(in, "point_mask", w);
    if (point_mask.size() != stages.size())
      throw Error(ErrorCode::dimension_mismatch, "point_mask needs one list per stage");
    SequencePointCloud seq;
    for (std::size_t t = 0; t < stages.size(); ++t) {
      StageCloud st;
      if (point_mask[t].size() != stages[t].size())
        throw Error(ErrorCode::dimension_mismatch, "point_mask length differs from stage " + std::to_string(t));
      for (const auto& p : stages[t]) {
        if (p.size() != 3) throw Error(ErrorCode::parse_failure, "points must be [x, y, z]");
        st.positions.push_back({p[0], p[1], p[2]});
      }
      seq.stages.push_back(std::move(st));
    }
    const auto grid = voxelize(seq, detail::get_or<double>(in, "resolution", kDefaultVoxelResolution, w));
    std::vector<std::uint8_t> finest(grid.size(), 0);
    for (std::size_t t = 0; t < stages.size(); ++t)
      for (std::size_t p = 0; p < stages[t].size(); ++p)
        if (point_mask[t][p]) finest[grid.voxel_of(static_cast<StageIndex>(t), static_cast<PointIndex>(p))] = 1;
    const int levels = detail::get_or<int>(in, "levels", 1, w);
    const auto level = detail::get_or<std::size_t>(in, "level", 0, w);
    const auto stack = build_mask_stack(build_grid_pyramid(grid, levels), finest);
    const auto pooled = st_pool_masks(stack, level);
    const auto& L = stack.levels.at(level);
    out["keys"] = Json::array();
    for (const auto& k : L.keys) out["keys"].push_back({k[0], k[1], k[2], k[3]});
    out["mask"] = L.mask;
    out["pooled"] = pooled;
  } else {
    throw Error(ErrorCode::invalid_argument, "unknown op '" + a.op + "'");
  }
  write_json(a.out, out);
  return kExitOk;
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::io_failure: return kExitIo;
    case ErrorCode::sequence_mismatch: return kExitValidation;
    default: return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporally sparse 4D instance segmentation: evaluation, association, synthesis"};
  app.require_subcommand(1);
  int threads = default_threads();
  app.add_option("--threads", threads, "Worker threads (default: $T4D_THREADS or 1)")
      ->check(CLI::PositiveNumber);

  EvaluateArgs ev;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Compute t-mAP and related metrics");
  evaluate_cmd->add_option("--gt", ev.gt, "Ground-truth manifest (repeatable)")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--pred", ev.pred, "Prediction file (repeatable, paired with --gt)")->required();
  evaluate_cmd->add_option("--thresholds", ev.thresholds, "Comma list of thresholds; 'sweep' is 0.50:0.05:0.95")
      ->capture_default_str();
  evaluate_cmd->add_flag("--per-change-type", ev.per_change_type, "Add recall per change type");
  evaluate_cmd->add_option("--seed", ev.seed, "Seed for ambiguous-group filling")->capture_default_str();
  evaluate_cmd->add_option("--out", ev.out, "Report path")->required();

  AssociateArgs as;
  auto* associate_cmd = app.add_subcommand("associate", "Lift per-stage predictions to multi-stage instances");
  associate_cmd->add_option("--mode", as.mode)->required()->check(CLI::IsMember({"semantic", "geometric"}));
  associate_cmd->add_option("--pred-a", as.pred_a, "Predictions for the earlier stage")->required();
  associate_cmd->add_option("--pred-b", as.pred_b, "Predictions for the later stage")->required();
  associate_cmd->add_option("--manifest", as.manifest, "Sequence manifest (geometric mode)");
  associate_cmd->add_option("--similarity-floor", as.similarity_floor)->capture_default_str();
  associate_cmd->add_option("--out", as.out)->required();

  GenerateArgs gen;
  auto* generate_cmd = app.add_subcommand("generate", "Write a synthetic sequence with ground truth");
  generate_cmd->add_option("--recipe", gen.recipe)->required();
  generate_cmd->add_option("--out", gen.out, "Output directory")->required();
  generate_cmd->add_flag("--with-predictions", gen.with_predictions, "Also write predictions.json");

  SerializeArgs se;
  auto* serialize_cmd = app.add_subcommand("serialize", "Order the voxels of a sequence along a curve");
  serialize_cmd->add_option("--curve", se.curve)
      ->required()
      ->check(CLI::IsMember({"zorder", "hilbert", "zorder-trans", "hilbert-trans"}));
  serialize_cmd->add_option("--dims", se.dims)->required()->check(CLI::IsMember({3, 4}));
  serialize_cmd->add_option("--manifest", se.manifest)->required();
  serialize_cmd->add_option("--resolution", se.resolution)->capture_default_str()->check(CLI::PositiveNumber);
  serialize_cmd->add_option("--bits", se.bits, "Bits per axis")->capture_default_str()->check(CLI::Range(1, 21));
  serialize_cmd->add_option("--out", se.out)->required();

  LossesArgs lo;
  auto* losses_cmd = app.add_subcommand("losses", "Evaluate a numeric kernel on JSON input");
  losses_cmd->add_option("--op", lo.op)->required()->check(CLI::IsMember({"contrastive", "cost", "fourier", "pool"}));
  losses_cmd->add_option("--in", lo.in)->required();
  losses_cmd->add_option("--out", lo.out)->required();

  for (auto* sub : {evaluate_cmd, associate_cmd, generate_cmd, serialize_cmd, losses_cmd}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == static_cast<int>(CLI::ExitCodes::Success) ? kExitOk : kExitUsage;
  }

  try {
    if (*evaluate_cmd) return run_evaluate(ev, threads);
    if (*associate_cmd) return run_associate(as);
    if (*generate_cmd) return run_generate(gen);
    if (*serialize_cmd) return run_serialize(se);
    if (*losses_cmd) return run_losses(lo);
  } catch (const ValidationFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitSoftware;
  }
  return kExitUsage;
}
