// Python bindings for the main operations: the three-view convolution and
// fusion, both coefficient learners, the masked-C3D equivalence kernel, the
// counters and the synthetic clip generator.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cost/baseline.hpp"
#include "cost/conv.hpp"
#include "cost/cost_op.hpp"
#include "cost/gradcheck_suites.hpp"
#include "cost/reference.hpp"
#include "cost/synth_data.hpp"

namespace py = pybind11;
using namespace cost;

namespace {

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor tensor_from_array(const DArray& a) {
  if (a.ndim() != 5) throw std::invalid_argument("expected a rank-5 array (n,t,h,w,c)");
  Tensor t(Shape5{a.shape(0), a.shape(1), a.shape(2), a.shape(3), a.shape(4)});
  std::copy(a.data(), a.data() + a.size(), t.data.begin());
  return t;
}

DArray tensor_to_array(const Tensor& t) {
  DArray a({t.shape.n, t.shape.t, t.shape.h, t.shape.w, t.shape.c});
  std::copy(t.data.begin(), t.data.end(), a.mutable_data());
  return a;
}

ConvKernel kernel_from_array(const DArray& a) {
  if (a.ndim() != 5) throw std::invalid_argument("expected a rank-5 kernel (o,i,kt,kh,kw)");
  ConvKernel k(a.shape(0), a.shape(1), a.shape(2), a.shape(3), a.shape(4));
  std::copy(a.data(), a.data() + a.size(), k.data.begin());
  return k;
}

DArray kernel_to_array(const ConvKernel& k) {
  DArray a({k.c_out, k.c_in, k.kt, k.kh, k.kw});
  std::copy(k.data.begin(), k.data.end(), a.mutable_data());
  return a;
}

SharedKernel shared_from_array(const DArray& a) {
  if (a.ndim() != 4 || a.shape(2) != a.shape(3))
    throw std::invalid_argument("expected a shared kernel (c_out,c_in,k,k)");
  SharedKernel k(a.shape(0), a.shape(1), a.shape(2));
  std::copy(a.data(), a.data() + a.size(), k.w.begin());
  return k;
}

Matrix matrix_from_array(const DArray& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a rank-2 array");
  Matrix m(a.shape(0), a.shape(1));
  std::copy(a.data(), a.data() + a.size(), m.data.begin());
  return m;
}

DArray matrix_to_array(const Matrix& m) {
  DArray a({m.rows, m.cols});
  std::copy(m.data.begin(), m.data.end(), a.mutable_data());
  return a;
}

Padding padding_from_string(const std::string& s) {
  if (s == "same") return Padding::Same;
  if (s == "valid") return Padding::Valid;
  throw std::invalid_argument("padding must be 'same' or 'valid'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "collaborative three-view spatiotemporal convolution core";

  m.def(
      "conv3d",
      [](const DArray& x, const DArray& kernel, std::tuple<i64, i64, i64> stride,
         const std::string& padding) {
        return tensor_to_array(conv3d(tensor_from_array(x), kernel_from_array(kernel),
                                      Stride3{std::get<0>(stride), std::get<1>(stride),
                                              std::get<2>(stride)},
                                      padding_from_string(padding)));
      },
      py::arg("x"), py::arg("kernel"), py::arg("stride") = std::make_tuple(1, 1, 1),
      py::arg("padding") = "same",
      "3D cross-correlation over a (n,t,h,w,c) tensor with a (o,i,kt,kh,kw) kernel");

  m.def(
      "conv3d_naive",
      [](const DArray& x, const DArray& kernel, std::tuple<i64, i64, i64> stride,
         const std::string& padding) {
        return tensor_to_array(ref::conv3d_naive(tensor_from_array(x), kernel_from_array(kernel),
                                                 Stride3{std::get<0>(stride), std::get<1>(stride),
                                                         std::get<2>(stride)},
                                                 padding_from_string(padding)));
      },
      py::arg("x"), py::arg("kernel"), py::arg("stride") = std::make_tuple(1, 1, 1),
      py::arg("padding") = "same", "direct-loop reference convolution");

  m.def(
      "conv_three_views",
      [](const DArray& x, const DArray& shared) {
        ViewTriple v = conv_three_views(tensor_from_array(x), shared_from_array(shared));
        return py::make_tuple(tensor_to_array(v.hw), tensor_to_array(v.tw),
                              tensor_to_array(v.th));
      },
      py::arg("x"), py::arg("shared_kernel"),
      "the three same-padded view convolutions (hw, tw, th) with one k x k bank");

  m.def(
      "fuse_views",
      [](const DArray& hw, const DArray& tw, const DArray& th, const DArray& alpha) {
        ViewTriple v{tensor_from_array(hw), tensor_from_array(tw), tensor_from_array(th)};
        return tensor_to_array(fuse_views(v, matrix_from_array(alpha)));
      },
      py::arg("x_hw"), py::arg("x_tw"), py::arg("x_th"), py::arg("alpha"),
      "per-channel weighted summation of the three views");

  m.def(
      "cost_a_forward",
      [](const DArray& x, const DArray& shared, const DArray& logits) {
        CostAResult r =
            cost_a_forward(tensor_from_array(x), shared_from_array(shared),
                           matrix_from_array(logits));
        return py::make_tuple(tensor_to_array(r.y), matrix_to_array(r.alpha));
      },
      py::arg("x"), py::arg("shared_kernel"), py::arg("logits"),
      "returns (y, alpha); alpha = softmax(logits) shared by every sample");

  m.def(
      "cost_b_forward",
      [](const DArray& x, const DArray& shared, const DArray& conv1x1, const DArray& fc_w,
         std::array<double, 3> fc_b) {
        CoeffPredictorParams pred;
        pred.conv1x1 = matrix_from_array(conv1x1);
        pred.fc_w = matrix_from_array(fc_w);
        pred.fc_b = fc_b;
        CostBResult r =
            cost_b_forward(tensor_from_array(x), shared_from_array(shared), pred);
        py::list alphas;
        for (const Matrix& a : r.alpha) alphas.append(matrix_to_array(a));
        return py::make_tuple(tensor_to_array(r.y), alphas);
      },
      py::arg("x"), py::arg("shared_kernel"), py::arg("conv1x1"), py::arg("fc_w"),
      py::arg("fc_b") = std::array<double, 3>{0.0, 0.0, 0.0},
      "returns (y, [alpha per sample]); coefficients predicted from the views");

  m.def(
      "masked_c3d_kernel",
      [](const DArray& shared, const DArray& alpha) {
        return kernel_to_array(
            cost_to_masked_c3d_kernel(shared_from_array(shared), matrix_from_array(alpha)));
      },
      py::arg("shared_kernel"), py::arg("alpha"),
      "equivalent k x k x k kernel with the 8 corner blocks fixed to zero");

  m.def(
      "receptive_field_count",
      [](const std::string& kind, i64 k) {
        return receptive_field_count(unit_kind_from_string(kind), k);
      },
      py::arg("kind"), py::arg("k") = 3,
      "influenced input voxels for one output voxel (kinds: c2d, c3d333, c3d311, cost-a, cost-b)");

  m.def("cost_ma_factor_naive", &cost_ma_factor_naive, py::arg("k"));
  m.def("cost_ma_factor_optimized", &cost_ma_factor_optimized, py::arg("k"));
  m.def("c3d_ma_factor", &c3d_ma_factor, py::arg("k"));

  m.def(
      "generate_clip",
      [](i64 class_id, i64 index, const std::string& split, const std::string& spec_json) {
        DatasetSpec spec = spec_json.empty() ? DatasetSpec::default_spec()
                                             : DatasetSpec::from_json_string(spec_json);
        SyntheticClip clip = generate_clip(spec, class_id, index,
                                           split == "val" ? Split::Val : Split::Train);
        return py::make_tuple(tensor_to_array(clip.video), clip.label,
                              std::string(class_kind_name(clip.kind)));
      },
      py::arg("class_id"), py::arg("index") = 0, py::arg("split") = "train",
      py::arg("spec_json") = "",
      "deterministic synthetic clip; returns (video, label, class_kind)");

  m.def("default_dataset_spec_json",
        []() { return DatasetSpec::default_spec().to_json_string(); });

  m.def(
      "gradcheck_ops",
      [](u64 seed) {
        py::list out;
        for (const auto& s : gradcheck_ops(seed)) {
          py::dict d;
          d["name"] = s.name;
          d["max_rel_error"] = s.report.max_rel_error;
          d["probes"] = s.report.probed_coordinates;
          d["pass"] = s.pass;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 0, "finite-difference checks for every primitive backward pass");

#ifdef COSTCNN_VERSION
  m.attr("__version__") = COSTCNN_VERSION;
#else
  m.attr("__version__") = "dev";
#endif
}
