#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "docdet/detector.hpp"
#include "docdet/error.hpp"
#include "docdet/evaluation.hpp"
#include "docdet/heatmaps.hpp"
#include "docdet/network.hpp"
#include "docdet/synthgen.hpp"
#include "docdet/training.hpp"

namespace py = pybind11;
using namespace docdet;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using BoxTuple = std::tuple<double, double, double, double>;

Array to_array(const Image& img) {
    Array a({img.height(), img.width()});
    std::copy(img.data().begin(), img.data().end(), a.mutable_data());
    return a;
}

Array stack(const Image& a, const Image& b, const Image& c) {
    Array out({3, a.height(), a.width()});
    float* p = out.mutable_data();
    for (const Image* m : {&a, &b, &c}) p = std::copy(m->data().begin(), m->data().end(), p);
    return out;
}

Image to_image(const Array& a) {
    if (a.ndim() != 2) throw py::value_error("expected a 2-D grayscale array");
    Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
    std::copy(a.data(), a.data() + a.size(), img.data().begin());
    return img;
}

template <typename T>
T parse(const std::string& json_text) {
    return json_text.empty() ? T{} : nlohmann::json::parse(json_text).get<T>();
}

BoxTuple to_tuple(const Box& b) { return {b.x0, b.y0, b.x1, b.y1}; }
Box to_box(const BoxTuple& t) { return {std::get<0>(t), std::get<1>(t), std::get<2>(t), std::get<3>(t)}; }

std::vector<std::vector<Box>> to_boxes(const std::vector<std::vector<BoxTuple>>& pages) {
    std::vector<std::vector<Box>> out;
    for (const auto& page : pages) {
        std::vector<Box>& boxes = out.emplace_back();
        for (const BoxTuple& t : page) boxes.push_back(to_box(t));
    }
    return out;
}

py::dict report_dict(const EvalReport& r) {
    py::dict d;
    d["precision"] = r.precision;
    d["recall"] = r.recall;
    d["f1"] = r.f1;
    d["true_positives"] = r.true_positives;
    d["predictions"] = r.predictions;
    d["ground_truths"] = r.ground_truths;
    return d;
}

}  // namespace

PYBIND11_MODULE(_docdet, m) {
    m.doc() = "Document text detection: synthetic pages, heatmaps, U-Net, post-processing and metrics.";

    // Translators run newest first, so the base class goes in first.
    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    m.def(
        "synth_page",
        [](std::uint64_t seed, const std::string& spec) {
            const PageSample p = generate_page(parse<SynthSpec>(spec), seed);
            std::vector<BoxTuple> boxes;
            for (const Box& b : p.regular_word_boxes()) boxes.push_back(to_tuple(b));
            return py::make_tuple(to_array(p.image), boxes);
        },
        py::arg("seed"), py::arg("spec_json") = "");

    m.def(
        "heatmaps",
        [](std::uint64_t seed, const std::string& spec) {
            const HeatmapTarget t = make_target(generate_page(parse<SynthSpec>(spec), seed));
            return stack(t.region, t.affinity, t.special);
        },
        py::arg("seed"), py::arg("spec_json") = "");

    m.def("iou", [](const BoxTuple& a, const BoxTuple& b) { return iou(to_box(a), to_box(b)); });
    m.def(
        "detection_f1",
        [](const std::vector<std::vector<BoxTuple>>& preds, const std::vector<std::vector<BoxTuple>>& gts,
           double thr) { return report_dict(detection_f1(to_boxes(preds), to_boxes(gts), thr)); },
        py::arg("preds"), py::arg("gts"), py::arg("iou_threshold") = 0.5);
    m.def("edit_score", &edit_score, py::arg("pred_texts"), py::arg("gt_texts"));
    m.def("parameter_count", [](const std::string& cfg) { return parameter_count(parse<ModelConfig>(cfg)); },
          py::arg("config_json") = "");

    py::class_<UNet<float>>(m, "Model")
        .def_static(
            "build",
            [](const std::string& cfg, std::uint64_t seed) { return UNet<float>::build(parse<ModelConfig>(cfg), seed); },
            py::arg("config_json") = "", py::arg("seed") = 0)
        .def_static("load", [](const std::filesystem::path& p) { return load_model(p); })
        .def("save", [](const UNet<float>& model, const std::filesystem::path& p) { save_model(p, model); })
        .def_property_readonly("parameter_count", &UNet<float>::parameter_count)
        .def_property_readonly("config_json", [](const UNet<float>& model) { return nlohmann::json(model.config()).dump(); })
        .def("predict_maps",
             [](const UNet<float>& model, const Array& image) {
                 const ScoreMaps s = predict_maps(model, to_image(image));
                 return stack(s.region, s.affinity, s.special);
             })
        .def(
            "detect",
            [](const UNet<float>& model, const Array& image, const std::string& cfg) {
                const DetectionResult r = detect(model, to_image(image), parse<PostprocessConfig>(cfg));
                std::vector<std::pair<BoxTuple, double>> out;
                for (size_t i = 0; i < r.boxes.size(); ++i) out.emplace_back(to_tuple(r.boxes[i]), r.scores[i]);
                return out;
            },
            py::arg("image"), py::arg("postprocess_json") = "")
        .def(
            "train",
            [](UNet<float>& model, const std::vector<std::uint64_t>& seeds, const std::string& spec,
               const std::string& cfg) {
                const SynthSpec s = parse<SynthSpec>(spec);
                std::vector<TrainSample> corpus;
                for (std::uint64_t seed : seeds) {
                    const PageSample p = generate_page(s, seed);
                    corpus.push_back({p.image, make_target(p)});
                }
                std::vector<double> losses;
                py::gil_scoped_release release;
                for (const EpochStats& e : train(model, corpus, parse<TrainConfig>(cfg))) losses.push_back(e.loss);
                return losses;
            },
            py::arg("page_seeds"), py::arg("spec_json") = "", py::arg("train_json") = "");
}
