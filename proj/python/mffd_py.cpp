#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mffd/experiment.hpp"
#include "mffd/forensic_features.hpp"
#include "mffd/surrogate.hpp"

namespace py = pybind11;
using namespace mffd;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

ImageU8 image_from(const U8Array& a) {
    if (a.ndim() != 3 || a.shape(2) != 3) throw Error(ErrorCode::ShapeMismatch, "expected an HxWx3 uint8 array");
    const auto h = static_cast<std::size_t>(a.shape(0)), w = static_cast<std::size_t>(a.shape(1));
    return ImageU8(w, h, std::vector<std::uint8_t>(a.data(), a.data() + a.size()));
}

U8Array array_from(const ImageU8& img) {
    U8Array out({img.height, img.width, std::size_t{3}});
    std::copy(img.data.begin(), img.data.end(), out.mutable_data());
    return out;
}

py::array_t<double> array_from(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    const auto v = t.data();
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

SurrogateKind parse_kind(const std::string& s) {
    if (s == "real") return SurrogateKind::Real;
    if (s == "fake_nearest") return SurrogateKind::FakeNearest;
    if (s == "fake_bilinear") return SurrogateKind::FakeBilinear;
    throw Error(ErrorCode::InvalidArgument, "unknown surrogate kind '" + s + "'");
}

py::dict report_dict(const EvalReport& r) {
    py::dict d;
    d["acc"] = r.acc;
    d["ap"] = r.ap;
    d["threshold"] = r.threshold;
    d["n_real"] = r.n_real;
    d["n_fake"] = r.n_fake;
    return d;
}

}  // namespace

PYBIND11_MODULE(mffd, m) {
    m.doc() = "Multi-feature frequency-aware detector of generated images";

    static py::exception<Error> error(m, "Error");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object exc = error;
            py::object inst = exc(e.what());
            inst.attr("code") = std::string(error_code_name(e.code()));
            PyErr_SetObject(exc.ptr(), inst.ptr());
        }
    });

    m.def("load_ppm", [](const std::filesystem::path& p) { return array_from(load_ppm(p)); }, py::arg("path"));
    m.def("save_ppm", [](const std::filesystem::path& p, const U8Array& a) { save_ppm(p, image_from(a)); },
          py::arg("path"), py::arg("image"));

    m.def(
        "npr",
        [](const U8Array& a, std::size_t l) {
            const ImageU8 img = image_from(a);
            const Tensor t = npr_extract(to_tensor_batch(std::span(&img, 1)), {l});
            return array_from(t.reshaped_copy({t.shape()[1], t.shape()[2], t.shape()[3]}));
        },
        py::arg("image"), py::arg("l") = 2, "NPR channels [3(l*l-1), H, W] of an HxWx3 uint8 image");

    m.def(
        "stub_embed",
        [](const U8Array& a, std::size_t dim) {
            const auto rec = stub_embed(image_from(a), dim);
            return py::array_t<float>(static_cast<py::ssize_t>(rec.vector.size()), rec.vector.data());
        },
        py::arg("image"), py::arg("dim") = 768);

    m.def(
        "read_embeddings",
        [](const std::filesystem::path& p) {
            const EmbeddingTable t = read_embedding_file(p);
            py::dict out;
            for (const auto& r : t.records())
                out[py::str(r.id)] = py::array_t<float>(static_cast<py::ssize_t>(r.vector.size()), r.vector.data());
            return py::make_tuple(t.dim(), out);
        },
        py::arg("path"), "Returns (dim, {id: float32 vector}) in file order");
    m.def(
        "write_embeddings",
        [](const std::filesystem::path& p, std::uint32_t dim, const py::dict& records) {
            EmbeddingTable t(dim);
            for (const auto& [k, v] : records) {
                auto a = py::cast<py::array_t<float, py::array::c_style | py::array::forcecast>>(v);
                t.add({py::cast<std::string>(k), std::vector<float>(a.data(), a.data() + a.size())});
            }
            write_embedding_file(p, t);
        },
        py::arg("path"), py::arg("dim"), py::arg("records"));

    m.def(
        "surrogate_image",
        [](const std::string& kind, std::size_t side, std::uint64_t seed) {
            return array_from(surrogate_image(parse_kind(kind), side, seed));
        },
        py::arg("kind"), py::arg("side"), py::arg("seed"));
    m.def(
        "write_surrogate",
        [](const std::filesystem::path& dir, std::size_t side, std::size_t train, std::size_t val, std::size_t test,
           std::uint64_t seed) {
            SurrogateSpec s;
            s.side = side;
            s.train_per_class = train;
            s.val_per_class = val;
            s.test_per_class = test;
            s.seed = seed;
            return write_surrogate(dir, s);
        },
        py::arg("dir"), py::arg("side") = 64, py::arg("train") = 200, py::arg("val") = 50, py::arg("test") = 100,
        py::arg("seed") = 1, "Writes the synthetic dataset and returns the manifest path");

    m.def("average_precision", [](std::vector<double> s, std::vector<int> y) { return average_precision(s, y); },
          py::arg("scores"), py::arg("labels"));
    m.def("balanced_accuracy",
          [](std::vector<double> s, std::vector<int> y, double t) { return balanced_accuracy(s, y, t); },
          py::arg("scores"), py::arg("labels"), py::arg("threshold"));
    m.def("calibrate_threshold", [](std::vector<double> s, std::vector<int> y) { return calibrate_threshold(s, y); },
          py::arg("scores"), py::arg("labels"));

    m.def(
        "resolve_config",
        [](const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides) {
            return resolved_line(resolve_config(path.value_or(std::filesystem::path{}), overrides));
        },
        py::arg("path") = py::none(), py::arg("overrides") = std::vector<std::string>{});

    py::class_<FittedRun>(m, "Run")
        .def_static("load", &load_run, py::arg("dir"))
        .def_static(
            "fit",
            [](const std::filesystem::path& manifest, const std::vector<std::string>& overrides) {
                return fit_run(resolve_config({}, overrides), read_manifest(manifest));
            },
            py::arg("manifest"), py::arg("overrides") = std::vector<std::string>{})
        .def("save", [](const FittedRun& r, const std::filesystem::path& dir) { save_run(dir, r); }, py::arg("dir"))
        .def_readonly("threshold", &FittedRun::threshold)
        .def_property_readonly("config", [](const FittedRun& r) { return resolved_line(r.config); })
        .def(
            "evaluate",
            [](const FittedRun& r, const std::filesystem::path& manifest, const std::string& split) {
                return report_dict(
                    evaluate_run(r, load_split(read_manifest(manifest), parse_split(split), r.config.model.image_size)));
            },
            py::arg("manifest"), py::arg("split") = "test")
        .def(
            "score",
            [](const FittedRun& r, const std::vector<U8Array>& images, const std::vector<std::string>& ids) {
                LabeledImages data;
                for (std::size_t i = 0; i < images.size(); ++i) {
                    data.images.push_back(center_crop_resize(image_from(images[i]), r.config.model.image_size));
                    data.labels.push_back(0);
                    data.ids.push_back(i < ids.size() ? ids[i] : std::to_string(i));
                }
                const auto table = load_embeddings(r.config);
                return score(r.detector, build_features(r.detector, data, table ? &*table : nullptr));
            },
            py::arg("images"), py::arg("ids") = std::vector<std::string>{},
            "Raw logits; ids are only used to look up file embeddings");
}
