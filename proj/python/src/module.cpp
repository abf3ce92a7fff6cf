#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ivf/commands.hpp"
#include "ivf/data.hpp"
#include "ivf/ops.hpp"
#include "ivf/train.hpp"
#include "ivf/vit.hpp"

namespace py = pybind11;
using namespace ivf;

namespace {

Tensor tensor_from_array(const py::array& arr) {
    py::array a = arr;
    DType dt;
    if (py::isinstance<py::array_t<float>>(arr)) {
        dt = DType::f32;
    } else if (py::isinstance<py::array_t<double>>(arr)) {
        dt = DType::f64;
    } else {
        a = py::array_t<double>::ensure(arr);
        dt = DType::f64;
    }
    py::buffer_info info = a.request();
    Shape shape(info.shape.begin(), info.shape.end());
    Tensor t = Tensor::empty(shape, dt);
    py::array c = py::array::ensure(a, py::array::c_style);
    if (dt == DType::f32) {
        auto* src = static_cast<const float*>(c.request().ptr);
        std::copy(src, src + t.numel(), t.span<float>().begin());
    } else {
        auto* src = static_cast<const double*>(c.request().ptr);
        std::copy(src, src + t.numel(), t.span<double>().begin());
    }
    return t;
}

py::array array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    if (t.dtype() == DType::f32) {
        py::array_t<float> out(shape);
        auto s = t.span<float>();
        std::copy(s.begin(), s.end(), static_cast<float*>(out.request().ptr));
        return out;
    }
    py::array_t<double> out(shape);
    auto s = t.span<double>();
    std::copy(s.begin(), s.end(), static_cast<double*>(out.request().ptr));
    return out;
}

ViTConfig config_from_kwargs(size_t image_size, size_t patch, size_t dim, size_t blocks,
                             size_t heads, size_t mlp_hidden, bool shift, size_t shift_back,
                             size_t shift_fwd, std::vector<size_t> head_classes,
                             const std::string& dtype) {
    ViTConfig cfg;
    cfg.image_h = cfg.image_w = image_size;
    cfg.patch = patch;
    cfg.dim = dim;
    cfg.blocks = blocks;
    cfg.heads = heads;
    cfg.mlp_hidden = mlp_hidden;
    cfg.shift_enabled = shift;
    cfg.shift_back = shift_back;
    cfg.shift_fwd = shift_fwd;
    cfg.head_classes = std::move(head_classes);
    if (dtype == "f32")
        cfg.dtype = DType::f32;
    else if (dtype == "f64")
        cfg.dtype = DType::f64;
    else
        throw ConfigError("dtype must be f32 or f64");
    cfg = with_default_shift(cfg);
    cfg.validate();
    return cfg;
}

SampleBatch batch_from_pixels(const py::array& pixels) {
    SampleBatch b;
    Tensor t = tensor_from_array(pixels);
    if (t.rank() == 4) {
        b.modality = Modality::image;
    } else if (t.rank() == 5) {
        b.modality = Modality::video;
    } else {
        throw ShapeError("pixels must be (B,3,H,W) or (B,T,3,H,W), got " +
                         shape_str(t.shape()));
    }
    b.pixels = std::move(t);
    b.labels.assign(b.pixels.extent(0), 0);
    return b;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "frame-wise image/video transformer core";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<IndexError>(m, "RangeError", PyExc_IndexError);
    py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    // tensor ops on numpy arrays
    m.def("matmul", [](const py::array& a, const py::array& b) {
        return array_from_tensor(ops::matmul(tensor_from_array(a), tensor_from_array(b)));
    });
    m.def("softmax", [](const py::array& x, size_t axis) {
        return array_from_tensor(ops::softmax(tensor_from_array(x), axis));
    });
    m.def(
        "layer_norm",
        [](const py::array& x, const py::array& gamma, const py::array& beta, double eps) {
            return array_from_tensor(ops::layer_norm(tensor_from_array(x),
                                                     tensor_from_array(gamma),
                                                     tensor_from_array(beta), eps));
        },
        py::arg("x"), py::arg("gamma"), py::arg("beta"), py::arg("eps") = 1e-5);
    m.def("gelu", [](const py::array& x) {
        return array_from_tensor(ops::gelu(tensor_from_array(x)));
    });
    m.def("mean_axis", [](const py::array& x, size_t axis) {
        return array_from_tensor(ops::mean_axis(tensor_from_array(x), axis));
    });
    m.def(
        "token_shift",
        [](const py::array& class_tokens, size_t back, size_t fwd) {
            Tensor t = tensor_from_array(class_tokens);
            if (t.rank() != 3) throw ShapeError("class tokens must be (B,T,D)");
            size_t B = t.extent(0), T = t.extent(1), D = t.extent(2);
            ActivationSet z{t.reshaped_view({B * T, 1, D}), B, T};
            Tensor out = token_shift(z, back, fwd).z;
            return array_from_tensor(out.reshaped_view({B, T, D}));
        },
        py::arg("class_tokens"), py::arg("back"), py::arg("fwd"),
        "Class-token temporal shift on a (B,T,D) stack.");
    m.def("cross_entropy", [](const py::array& logits, const std::vector<size_t>& labels) {
        return cross_entropy(tensor_from_array(logits), labels).item();
    });

    // weighting math
    m.def("dwa_weights", &dwa_weights, py::arg("window_means"), py::arg("temperature") = 1.0);
    m.def("dtp_weight", &dtp_weight, py::arg("kappa"), py::arg("gamma") = 1.0);

    // model
    py::class_<ViTModel>(m, "Model")
        .def(py::init([](size_t image_size, size_t patch, size_t dim, size_t blocks,
                         size_t heads, size_t mlp_hidden, bool shift, size_t shift_back,
                         size_t shift_fwd, std::vector<size_t> head_classes,
                         const std::string& dtype, uint64_t seed) {
                 return ViTModel::init(
                     config_from_kwargs(image_size, patch, dim, blocks, heads, mlp_hidden,
                                        shift, shift_back, shift_fwd, std::move(head_classes),
                                        dtype),
                     seed);
             }),
             py::arg("image_size"), py::arg("patch"), py::arg("dim"), py::arg("blocks"),
             py::arg("heads"), py::arg("mlp_hidden"), py::arg("shift") = false,
             py::arg("shift_back") = 0, py::arg("shift_fwd") = 0,
             py::arg("head_classes") = std::vector<size_t>{2}, py::arg("dtype") = "f32",
             py::arg("seed") = 0)
        .def(
            "forward",
            [](const ViTModel& model, const py::array& pixels, size_t head) {
                return array_from_tensor(
                    forward_logits(model, batch_from_pixels(pixels), head));
            },
            py::arg("pixels"), py::arg("head") = 0,
            "Raw logits for an image (B,3,H,W) or video (B,T,3,H,W) batch.")
        .def(
            "class_tokens",
            [](const ViTModel& model, const py::array& pixels, size_t head) {
                return array_from_tensor(
                    forward_full(model, batch_from_pixels(pixels), head).class_tokens);
            },
            py::arg("pixels"), py::arg("head") = 0, "Pre-pooling class tokens (B,T,D).")
        .def("parameters",
             [](ViTModel& model) {
                 py::dict out;
                 for (auto& p : model.parameters())
                     out[py::str(p.name)] = array_from_tensor(p.value);
                 return out;
             })
        .def("save", [](const ViTModel& model,
                        const std::filesystem::path& path) { checkpoint_save(model, path); })
        .def_static("load",
                    [](const std::filesystem::path& path) { return checkpoint_load(path); })
        .def_property_readonly("num_heads",
                               [](const ViTModel& m_) { return m_.heads.size(); })
        .def_property_readonly("dim", [](const ViTModel& m_) { return m_.cfg.dim; });

    // datasets / experiments
    m.def(
        "synth_dataset",
        [](const std::string& kind, size_t classes, size_t samples, size_t val_samples,
           size_t height, size_t width, size_t frames, uint64_t seed,
           const std::filesystem::path& out_dir, const std::string& name) {
            SynthParams p;
            p.kind = synth_kind_from(kind);
            p.classes = classes;
            p.train_samples = samples;
            p.val_samples = val_samples;
            p.height = height;
            p.width = width;
            p.frames = frames;
            p.seed = seed;
            p.name = name;
            DatasetSpec spec = synth_dataset(p, out_dir);
            return spec.name;
        },
        py::arg("kind"), py::arg("classes"), py::arg("samples"), py::arg("val_samples"),
        py::arg("height"), py::arg("width"), py::arg("frames") = 4, py::arg("seed") = 0,
        py::arg("out_dir") = ".", py::arg("name") = "");

    m.def(
        "train",
        [](const std::string& config_json) {
            RunConfig cfg = run_config_from_json(nlohmann::json::parse(config_json));
            TrainOutputs out = cmd_train(cfg);
            py::dict d;
            d["checkpoint"] = out.checkpoint.string();
            d["metrics"] = out.metrics.string();
            d["eval_metrics"] = out.eval_metrics.string();
            d["resolved_config"] = out.resolved_config.string();
            return d;
        },
        py::arg("config_json"), "Runs a training experiment from a run-config JSON string.");

    m.def(
        "evaluate",
        [](const std::filesystem::path& checkpoint, const std::filesystem::path& dataset_dir,
           const std::string& split, size_t head, size_t batch) {
            EvalResult r = cmd_eval(checkpoint, dataset_dir,
                                    split == "train" ? Split::train : Split::val, head, batch);
            return py::make_tuple(r.top1, r.top5);
        },
        py::arg("checkpoint"), py::arg("dataset_dir"), py::arg("split") = "val",
        py::arg("head") = 0, py::arg("batch") = 6);

    m.def(
        "gradcheck",
        [](bool shift, bool sabotage) {
            GradcheckReport r = cmd_gradcheck(shift, sabotage);
            return py::make_tuple(r.max_rel_err, r.pass);
        },
        py::arg("shift") = true, py::arg("sabotage") = false);

    m.def("export_metrics", [](const std::filesystem::path& metrics,
                               const std::filesystem::path& out_dir) {
        std::vector<std::string> files;
        for (auto& p : cmd_export(metrics, out_dir)) files.push_back(p.string());
        return files;
    });
}
