#include "mvgen/io/poses_file.hpp"

#include "mvgen/io/binary.hpp"

#include <json.hpp>

namespace mvgen::io {

namespace {

using nlohmann::json;

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vector_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) rows.push_back(vector_json(m.row(r).transpose()));
  return rows;
}

Eigen::MatrixXd matrix_from(const json& j, Index cols) {
  Eigen::MatrixXd m(static_cast<Index>(j.size()), cols);
  for (Index r = 0; r < m.rows(); ++r) {
    const Eigen::VectorXd row = vector_from(j.at(static_cast<std::size_t>(r)));
    if (row.size() != cols) throw FormatError("poses file: ragged matrix");
    m.row(r) = row.transpose();
  }
  return m;
}

json pca_json(const PcaModel& p) {
  return {{"mean", vector_json(p.mean)},
          {"components", matrix_json(p.components)},
          {"explained_variance", vector_json(p.explained_variance)},
          {"singular_values", vector_json(p.singular_values)},
          {"samples_seen", p.samples_seen}};
}

PcaModel pca_from(const json& j) {
  PcaModel p;
  p.mean = vector_from(j.at("mean"));
  p.components = matrix_from(j.at("components"), p.mean.size());
  p.explained_variance = vector_from(j.at("explained_variance"));
  p.singular_values = vector_from(j.at("singular_values"));
  p.samples_seen = j.at("samples_seen").get<std::int64_t>();
  return p;
}

}  // namespace

std::string poses_json(const PoseModel& model) {
  const Index hw = model.grid_height * model.grid_width;
  json centroids = json::array();
  for (Index k = 0; k < model.centroids.rows(); ++k) {
    json channels = json::array();
    for (Index ch = 0; ch < 3; ++ch) {
      json rows = json::array();
      for (Index r = 0; r < model.grid_height; ++r) {
        std::vector<double> row(static_cast<std::size_t>(model.grid_width));
        for (Index c = 0; c < model.grid_width; ++c) {
          row[static_cast<std::size_t>(c)] = model.centroids(k, ch * hw + r * model.grid_width + c);
        }
        rows.push_back(row);
      }
      channels.push_back(rows);
    }
    centroids.push_back(channels);
  }
  json labels = json::object();
  for (std::size_t i = 0; i < model.image_ids.size(); ++i) labels[model.image_ids[i]] = model.labels[i];
  const json j{{"k", model.k},
               {"labels", labels},
               {"image_order", model.image_ids},
               {"centroids", centroids},
               {"pca1", pca_json(model.pca1)},
               {"pca2", pca_json(model.pca2)},
               {"rejected", model.rejected},
               {"grid", {{"height", model.grid_height}, {"width", model.grid_width}, {"channels", model.channels},
                         {"patch_size", model.patch_size}}},
               {"target_box",
                {model.target_box.x0, model.target_box.y0, model.target_box.x1, model.target_box.y1}},
               {"inertia", model.inertia},
               {"inertia_history", model.inertia_history}};
  return j.dump(1) + "\n";
}

PoseModel parse_poses(std::string_view text) {
  try {
    const json j = json::parse(text);
    PoseModel m;
    m.k = j.at("k").get<int>();
    const json& grid = j.at("grid");
    m.grid_height = grid.at("height").get<Index>();
    m.grid_width = grid.at("width").get<Index>();
    m.channels = grid.at("channels").get<Index>();
    m.patch_size = grid.at("patch_size").get<int>();
    m.pca1 = pca_from(j.at("pca1"));
    m.pca2 = pca_from(j.at("pca2"));
    const auto box = j.at("target_box").get<std::vector<double>>();
    if (box.size() != 4) throw FormatError("poses file: target_box needs 4 numbers");
    m.target_box = {box[0], box[1], box[2], box[3]};
    const json& labels = j.at("labels");
    m.image_ids = j.at("image_order").get<std::vector<std::string>>();
    for (const auto& id : m.image_ids) {
      const int label = labels.at(id).get<int>();
      if (label < 0 || label >= m.k) throw FormatError("poses file: label out of range for " + id);
      m.labels.push_back(label);
    }
    if (labels.size() != m.image_ids.size()) throw FormatError("poses file: labels and image_order disagree");
    const Index hw = m.grid_height * m.grid_width;
    const json& cj = j.at("centroids");
    if (static_cast<int>(cj.size()) != m.k) throw FormatError("poses file: expected k centroids");
    m.centroids.resize(m.k, 3 * hw);
    for (Index k = 0; k < m.k; ++k) {
      for (Index ch = 0; ch < 3; ++ch) {
        for (Index r = 0; r < m.grid_height; ++r) {
          const auto row = cj.at(static_cast<std::size_t>(k))
                               .at(static_cast<std::size_t>(ch))
                               .at(static_cast<std::size_t>(r))
                               .get<std::vector<double>>();
          if (static_cast<Index>(row.size()) != m.grid_width) throw FormatError("poses file: ragged centroid");
          for (Index c = 0; c < m.grid_width; ++c) {
            m.centroids(k, ch * hw + r * m.grid_width + c) = row[static_cast<std::size_t>(c)];
          }
        }
      }
    }
    m.rejected = j.at("rejected").get<std::vector<std::string>>();
    m.inertia = j.at("inertia").get<double>();
    m.inertia_history = j.value("inertia_history", std::vector<double>{});
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("poses file: ") + e.what());
  }
}

void write_poses(const std::filesystem::path& path, const PoseModel& model) { write_file(path, poses_json(model)); }

PoseModel read_poses(const std::filesystem::path& path) { return parse_poses(read_file(path)); }

}  // namespace mvgen::io
