#include "sms/oracle.hpp"

#include <csignal>
#include <cstdio>
#include <fstream>
#include <mutex>

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "sms/rng.hpp"

namespace sms {

double LossOracle::vector_loss(const std::string&, const Vector&) {
  throw ArgumentError("oracle has no vector-level entry point");
}

namespace {

// Numerically stable -log softmax(logits)[label].
double cross_entropy(const Vector& logits, int label) {
  const double max_logit = logits.maxCoeff();
  const double log_sum = std::log((logits.array() - max_logit).exp().sum()) + max_logit;
  return log_sum - logits(label);
}

}  // namespace

LinearProbe fit_linear_probe(const Dataset& dataset, int epochs, double learning_rate,
                             std::uint64_t seed) {
  if (dataset.size() == 0) throw ArgumentError("fit_linear_probe: empty dataset");
  if (epochs < 1) throw ArgumentError("fit_linear_probe: epochs must be >= 1");
  if (learning_rate <= 0) throw ArgumentError("fit_linear_probe: learning rate must be > 0");
  const int classes = dataset.class_count();
  if (classes < 2) throw ArgumentError("fit_linear_probe: need at least 2 classes");
  const int d = dataset.dim();

  const int count = static_cast<int>(dataset.size());
  Matrix inputs(count, d);
  std::vector<int> labels(count);
  {
    int row = 0;
    for (const std::string& id : dataset.video_ids()) {
      const VideoSample& sample = dataset.at(id);
      if (sample.label >= classes) throw DataError("label out of range for " + id);
      inputs.row(row) = mean_rows(sample.features.rows).transpose();
      labels[row] = sample.label;
      ++row;
    }
  }

  Rng rng(seed);
  LinearProbe probe;
  probe.weights.resize(classes, d);
  for (int c = 0; c < classes; ++c)
    for (int j = 0; j < d; ++j) probe.weights(c, j) = 0.01 * rng.gaussian();
  probe.bias = Vector::Zero(classes);

  const double scale = learning_rate / count;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    // residual = softmax(logits) - onehot, per video
    Matrix logits = inputs * probe.weights.transpose();
    logits.rowwise() += probe.bias.transpose();
    Matrix residual(count, classes);
    for (int i = 0; i < count; ++i) {
      Eigen::RowVectorXd row = logits.row(i);
      row.array() -= row.maxCoeff();
      Eigen::RowVectorXd p = row.array().exp();
      p /= p.sum();
      residual.row(i) = p;
      residual(i, labels[i]) -= 1.0;
    }
    probe.weights.noalias() -= scale * (residual.transpose() * inputs);
    probe.bias -= scale * residual.colwise().sum().transpose();
  }
  if (!probe.weights.allFinite() || !probe.bias.allFinite())
    throw DivergenceError("fit_linear_probe: non-finite weights");
  return probe;
}

double probe_vector_loss(const LinearProbe& probe, const Vector& feature, int label) {
  if (feature.size() != probe.dim()) throw ArgumentError("probe_vector_loss: dimension mismatch");
  if (label < 0 || label >= probe.class_count())
    throw ArgumentError("probe_vector_loss: label out of range");
  return cross_entropy(probe.weights * feature + probe.bias, label);
}

double probe_loss(const LinearProbe& probe, const FeatureMatrix& features,
                  const FrameCombination& combination, int label) {
  if (combination.size() == 0) throw ArgumentError("probe_loss: empty combination");
  return probe_vector_loss(probe, mean_pool_rows(features.rows, combination.indices()), label);
}

int probe_predict(const LinearProbe& probe, const Vector& feature) {
  Eigen::Index best;
  (probe.weights * feature + probe.bias).maxCoeff(&best);
  return static_cast<int>(best);
}

void save_probe(const std::filesystem::path& path, const LinearProbe& probe) {
  nlohmann::json w = nlohmann::json::array();
  for (int c = 0; c < probe.class_count(); ++c) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < probe.dim(); ++j) row.push_back(probe.weights(c, j));
    w.push_back(std::move(row));
  }
  nlohmann::json b = nlohmann::json::array();
  for (int c = 0; c < probe.class_count(); ++c) b.push_back(probe.bias(c));
  nlohmann::json j{{"C", probe.class_count()}, {"d", probe.dim()}, {"W", w}, {"b", b}};

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << j.dump() << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

LinearProbe load_probe(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open probe file: " + path.string());
  try {
    nlohmann::json j = nlohmann::json::parse(in);
    const int classes = j.at("C").get<int>();
    const int d = j.at("d").get<int>();
    if (classes < 1 || d < 1) throw FormatError("probe file declares empty matrix");
    LinearProbe probe;
    probe.weights.resize(classes, d);
    probe.bias.resize(classes);
    const auto& w = j.at("W");
    const auto& b = j.at("b");
    if (static_cast<int>(w.size()) != classes || static_cast<int>(b.size()) != classes)
      throw FormatError("probe file shape mismatch");
    for (int c = 0; c < classes; ++c) {
      if (static_cast<int>(w[c].size()) != d) throw FormatError("probe file shape mismatch");
      for (int jx = 0; jx < d; ++jx) probe.weights(c, jx) = w[c][jx].get<double>();
      probe.bias(c) = b[c].get<double>();
    }
    if (!probe.weights.allFinite() || !probe.bias.allFinite())
      throw DataError("non-finite probe weights: " + path.string());
    return probe;
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError("bad probe file: " + std::string(ex.what()));
  }
}

ProbeOracle::ProbeOracle(LinearProbe probe, const Dataset& dataset)
    : probe_(std::move(probe)), dataset_(dataset) {
  if (dataset_.size() > 0 && probe_.dim() != dataset_.dim())
    throw DataError("probe dimension does not match dataset");
}

double ProbeOracle::loss(const std::string& video_id, const FrameCombination& combination) {
  const VideoSample& sample = dataset_.at(video_id);
  return probe_loss(probe_, sample.features, combination, sample.label);
}

double ProbeOracle::vector_loss(const std::string& video_id, const Vector& feature) {
  return probe_vector_loss(probe_, feature, dataset_.at(video_id).label);
}

Vector per_frame_losses(LossOracle& oracle, const std::string& video_id, int frame_count) {
  if (frame_count < 1) throw ArgumentError("per_frame_losses: frame_count must be >= 1");
  Vector losses(frame_count);
  for (int i = 0; i < frame_count; ++i)
    losses(i) = oracle.loss(video_id, FrameCombination({i}));
  return losses;
}

Vector per_clip_losses(LossOracle& oracle, const FeatureMatrix& features,
                       const ClipPartition& partition) {
  Vector losses(partition.clip_count());
  for (int c = 0; c < partition.clip_count(); ++c) {
    const IndexRange& range = partition.ranges[c];
    if (oracle.supports_vector_loss()) {
      losses(c) = oracle.vector_loss(features.video_id, clip_feature(features, range));
    } else {
      std::vector<int> frames(range.length());
      for (int i = 0; i < range.length(); ++i) frames[i] = range.start + i;
      losses(c) = oracle.loss(features.video_id, FrameCombination(std::move(frames)));
    }
  }
  return losses;
}

namespace {

// Child process speaking the line-delimited JSON protocol.
class RemoteOracle : public LossOracle {
 public:
  explicit RemoteOracle(const std::string& command) {
    std::signal(SIGPIPE, SIG_IGN);
    int to_child[2];
    int from_child[2];
    if (pipe(to_child) != 0 || pipe(from_child) != 0)
      throw IoError("remote oracle: pipe() failed");
    pid_ = fork();
    if (pid_ < 0) throw IoError("remote oracle: fork() failed");
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    child_stdin_ = fdopen(to_child[1], "w");
    child_stdout_ = fdopen(from_child[0], "r");
    if (!child_stdin_ || !child_stdout_) throw IoError("remote oracle: fdopen() failed");
  }

  ~RemoteOracle() override {
    if (child_stdin_) fclose(child_stdin_);
    if (child_stdout_) fclose(child_stdout_);
    if (pid_ > 0) {
      int status = 0;
      for (int i = 0; i < 50; ++i) {
        if (waitpid(pid_, &status, WNOHANG) != 0) return;
        usleep(20'000);
      }
      kill(pid_, SIGKILL);
      waitpid(pid_, &status, 0);
    }
  }

  double loss(const std::string& video_id, const FrameCombination& combination) override {
    std::lock_guard<std::mutex> lock(mutex_);
    const std::uint64_t id = next_id_++;
    nlohmann::json request{{"id", id}, {"video_id", video_id}, {"frames", combination.indices()}};
    const std::string line = request.dump() + "\n";
    if (fputs(line.c_str(), child_stdin_) == EOF || fflush(child_stdin_) != 0)
      throw OracleUnavailable("remote oracle: child closed stdin");

    std::string reply;
    for (int ch; (ch = fgetc(child_stdout_)) != '\n';) {
      if (ch == EOF) throw OracleUnavailable("remote oracle: child closed stdout");
      reply.push_back(static_cast<char>(ch));
    }

    try {
      nlohmann::json response = nlohmann::json::parse(reply);
      if (response.at("id").get<std::uint64_t>() != id)
        throw ProtocolError("remote oracle: response id mismatch");
      const double value = response.at("loss").get<double>();
      if (!std::isfinite(value)) throw ProtocolError("remote oracle: non-finite loss");
      return value;
    } catch (const nlohmann::json::exception& ex) {
      throw ProtocolError("remote oracle: malformed response: " + std::string(ex.what()));
    }
  }

 private:
  pid_t pid_ = -1;
  FILE* child_stdin_ = nullptr;
  FILE* child_stdout_ = nullptr;
  std::uint64_t next_id_ = 1;
  std::mutex mutex_;
};

}  // namespace

std::unique_ptr<LossOracle> make_remote_oracle(const std::string& command) {
  return std::make_unique<RemoteOracle>(command);
}

}  // namespace sms
