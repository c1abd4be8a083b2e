#include "cost/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "cost/baseline.hpp"
#include "cost/errors.hpp"

namespace cost {

using nlohmann::json;

namespace {

struct CoeffAccum {
  std::string layer;
  double sum[3] = {0.0, 0.0, 0.0};
  i64 terms = 0;  // samples * channels folded into each sum
  bool constant = true;
};

/// Runs eval forwards and pulls the per-sample coefficients out of the tapes.
/// Also hands per-sample temporal shares to `per_sample` when given.
std::vector<CoeffAccum> accumulate_coeffs(Network& net, const std::vector<SyntheticClip>& clips,
                                          i64 batch_size,
                                          std::vector<double>* per_sample_temporal) {
  std::vector<size_t> cost_units;
  for (size_t i = 0; i < net.units.size(); ++i)
    if (net.units[i].cost) cost_units.push_back(i);
  if (cost_units.empty())
    throw std::invalid_argument("coefficient analysis: network has no CoST units");

  std::vector<CoeffAccum> acc(cost_units.size());
  size_t block = 0, within = 0, ci = 0;
  for (size_t i = 0; i < net.units.size(); ++i) {
    while (block < net.cfg.blocks.size() &&
           within >= static_cast<size_t>(net.cfg.blocks[block].units)) {
      ++block;
      within = 0;
    }
    if (net.units[i].cost)
      acc[ci++].layer =
          "block" + std::to_string(block + 1) + ".unit" + std::to_string(within) + ".cost";
    ++within;
  }

  if (per_sample_temporal) per_sample_temporal->assign(clips.size(), 0.0);

  for (size_t begin = 0; begin < clips.size(); begin += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(clips.size(), begin + static_cast<size_t>(batch_size));
    std::vector<i64> idx(end - begin);
    std::iota(idx.begin(), idx.end(), static_cast<i64>(begin));
    Tensor batch = stack_clips(clips, idx);
    Network::Tape tape;
    net.forward(batch, Mode::Eval, &tape);

    for (size_t u = 0; u < cost_units.size(); ++u) {
      const auto& cc = tape.unit_caches[cost_units[u]].costc;
      acc[u].constant = acc[u].constant && cc.alpha_is_constant;
      for (size_t s = 0; s < cc.alpha.size(); ++s) {
        const Matrix& a = cc.alpha[s];
        double tshare_sum = 0.0;
        for (i64 r = 0; r < a.rows; ++r) {
          for (int v = 0; v < 3; ++v) acc[u].sum[v] += a.at(r, v);
          tshare_sum += a.at(r, 1) + a.at(r, 2);
        }
        acc[u].terms += a.rows;
        if (per_sample_temporal)
          (*per_sample_temporal)[begin + s] +=
              tshare_sum / static_cast<double>(a.rows) / static_cast<double>(cost_units.size());
      }
    }
  }
  return acc;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const size_t n = x.size();
  if (n < 2) return 0.0;
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

CoefficientProfile coefficient_profile(Network& net, const std::vector<SyntheticClip>& clips,
                                       i64 batch_size) {
  check(!clips.empty(), "coefficient_profile: empty clip set");
  std::vector<CoeffAccum> acc = accumulate_coeffs(net, clips, batch_size, nullptr);

  CoefficientProfile prof;
  prof.n_samples = static_cast<i64>(clips.size());
  prof.is_constant = true;
  std::vector<double> depths, tshares;
  for (size_t u = 0; u < acc.size(); ++u) {
    LayerCoeffProfile lp;
    lp.layer = acc[u].layer;
    lp.depth_index = static_cast<int>(u);
    lp.mean_hw = acc[u].sum[0] / static_cast<double>(acc[u].terms);
    lp.mean_tw = acc[u].sum[1] / static_cast<double>(acc[u].terms);
    lp.mean_th = acc[u].sum[2] / static_cast<double>(acc[u].terms);
    const double rowsum = lp.mean_hw + lp.mean_tw + lp.mean_th;
    check(std::abs(rowsum - 1.0) <= 1e-5,
          "coefficient_profile: layer means are not row-stochastic");
    prof.per_layer.push_back(lp);
    prof.overall[0] += lp.mean_hw;
    prof.overall[1] += lp.mean_tw;
    prof.overall[2] += lp.mean_th;
    prof.is_constant = prof.is_constant && acc[u].constant;
    depths.push_back(static_cast<double>(u));
    tshares.push_back(lp.mean_tw + lp.mean_th);
  }
  for (auto& v : prof.overall) v /= static_cast<double>(acc.size());
  prof.depth_temporal_correlation = pearson(depths, tshares);
  return prof;
}

std::string CoefficientProfile::to_csv() const {
  std::ostringstream os;
  os << "layer,depth_index,mean_hw,mean_tw,mean_th\n";
  for (const auto& l : per_layer)
    os << l.layer << "," << l.depth_index << "," << l.mean_hw << "," << l.mean_tw << ","
       << l.mean_th << "\n";
  os << "overall,," << overall[0] << "," << overall[1] << "," << overall[2] << "\n";
  return os.str();
}

std::string CoefficientProfile::to_json_string() const {
  json j;
  j["per_layer"] = json::array();
  for (const auto& l : per_layer)
    j["per_layer"].push_back({{"layer", l.layer},
                              {"depth_index", l.depth_index},
                              {"mean_hw", l.mean_hw},
                              {"mean_tw", l.mean_tw},
                              {"mean_th", l.mean_th}});
  j["overall"] = {{"mean_hw", overall[0]}, {"mean_tw", overall[1]}, {"mean_th", overall[2]}};
  j["overall_temporal_share"] = overall_temporal_share();
  j["n_samples"] = n_samples;
  j["is_constant"] = is_constant;
  j["depth_temporal_correlation"] = depth_temporal_correlation;
  return j.dump(2);
}

std::string CoefficientProfile::plot_data_csv() const {
  std::ostringstream os;
  os << "x,y\n";
  for (const auto& l : per_layer) os << l.depth_index << "," << (l.mean_tw + l.mean_th) << "\n";
  return os.str();
}

std::vector<ClassTemporalRow> class_temporal_ranking(Network& net,
                                                     const std::vector<SyntheticClip>& clips,
                                                     i64 batch_size) {
  check(!clips.empty(), "class_temporal_ranking: empty clip set");
  std::vector<double> per_sample;
  accumulate_coeffs(net, clips, batch_size, &per_sample);

  std::map<i64, ClassTemporalRow> by_class;
  std::map<i64, i64> counts;
  for (size_t i = 0; i < clips.size(); ++i) {
    auto& row = by_class[clips[i].label];
    row.class_id = clips[i].label;
    row.kind = clips[i].kind;
    row.temporal_score += per_sample[i];
    counts[clips[i].label] += 1;
  }
  std::vector<ClassTemporalRow> rows;
  for (auto& [id, row] : by_class) {
    check(counts[id] > 0, "class_temporal_ranking: empty class");
    row.temporal_score /= static_cast<double>(counts[id]);
    rows.push_back(row);
  }
  std::sort(rows.begin(), rows.end(), [](const ClassTemporalRow& a, const ClassTemporalRow& b) {
    if (a.temporal_score != b.temporal_score) return a.temporal_score > b.temporal_score;
    return a.class_id < b.class_id;
  });
  return rows;
}

std::string ranking_to_csv(const std::vector<ClassTemporalRow>& rows) {
  std::ostringstream os;
  os << "class_id,class_kind,temporal_score\n";
  for (const auto& r : rows)
    os << r.class_id << "," << class_kind_name(r.kind) << "," << r.temporal_score << "\n";
  return os.str();
}

std::string ranking_to_json(const std::vector<ClassTemporalRow>& rows) {
  json j = json::array();
  for (const auto& r : rows)
    j.push_back({{"class_id", r.class_id},
                 {"class_kind", class_kind_name(r.kind)},
                 {"temporal_score", r.temporal_score}});
  return j.dump(2);
}

std::string AblationReport::to_csv() const {
  std::ostringstream os;
  os << "variant,class_kind,top1,params,ma_naive,ma_opt\n";
  for (const auto& v : variants) {
    auto row = [&](const std::string& kind, double top1) {
      os << v.variant << "," << kind << "," << top1 << "," << v.params << "," << v.ma_naive << ","
         << v.ma_opt << "\n";
    };
    for (const auto& kind : kinds_present) {
      if (kind == "appearance" && v.eval.by_kind_appearance) row(kind, *v.eval.by_kind_appearance);
      if (kind == "motion" && v.eval.by_kind_motion) row(kind, *v.eval.by_kind_motion);
      if (kind == "mixed" && v.eval.by_kind_mixed) row(kind, *v.eval.by_kind_mixed);
    }
  }
  return os.str();
}

std::string AblationReport::to_json_string() const {
  json j = json::array();
  for (const auto& v : variants) {
    json e;
    e["variant"] = v.variant;
    e["top1_overall"] = v.eval.top1;
    if (v.eval.by_kind_appearance) e["top1_appearance"] = *v.eval.by_kind_appearance;
    if (v.eval.by_kind_motion) e["top1_motion"] = *v.eval.by_kind_motion;
    if (v.eval.by_kind_mixed) e["top1_mixed"] = *v.eval.by_kind_mixed;
    e["params"] = v.params;
    e["ma_naive"] = v.ma_naive;
    e["ma_opt"] = v.ma_opt;
    if (v.profile) e["coefficient_profile"] = json::parse(v.profile->to_json_string());
    j.push_back(e);
  }
  return j.dump(2);
}

AblationReport ablation_suite(const Dataset& data, const NetworkConfig& base_net,
                              const TrainConfig& base_train) {
  struct Variant {
    const char* name;
    UnitKind kind;
    bool share;
  };
  const Variant variants[] = {
      {"c2d", UnitKind::C2D, true},
      {"c3d311", UnitKind::C3D_311, true},
      {"c3d333", UnitKind::C3D_333, true},
      {"cost-a", UnitKind::CoST_a, true},
      {"cost-b", UnitKind::CoST_b, true},
      {"cost-b-noshare", UnitKind::CoST_b, false},
  };

  AblationReport report;
  // kinds present in the dataset, in a fixed order
  bool has_a = false, has_m = false, has_x = false;
  for (const auto& c : data.spec.classes) {
    has_a |= c.kind == ClassKind::Appearance;
    has_m |= c.kind == ClassKind::Motion;
    has_x |= c.kind == ClassKind::Mixed;
  }
  if (has_a) report.kinds_present.push_back("appearance");
  if (has_m) report.kinds_present.push_back("motion");
  if (has_x) report.kinds_present.push_back("mixed");

  for (const Variant& v : variants) {
    NetworkConfig ncfg = base_net;
    ncfg.unit_kind = v.kind;
    ncfg.share_weights = v.share;
    Network net = Network::build(ncfg);

    TrainResult tr = train(net, data, base_train);

    AblationVariantResult res;
    res.variant = v.name;
    res.eval = tr.final_eval;
    OpCostReport cost_report = count_cost(net);
    res.params = cost_report.total_params();
    res.ma_naive = cost_report.total_ma_naive();
    res.ma_opt = cost_report.total_ma_opt();
    if (v.kind == UnitKind::CoST_a || v.kind == UnitKind::CoST_b)
      res.profile = coefficient_profile(net, data.val, base_train.batch_size);
    report.variants.push_back(std::move(res));
  }
  return report;
}

}  // namespace cost
