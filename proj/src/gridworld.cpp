#include "lfi/gridworld.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <tuple>

#include "lfi/errors.hpp"

namespace lfi {

namespace {

constexpr char kDefaultMap[] =
    "0000000000000\n"
    "0000000000000\n"
    "0000000034400\n"
    "0000000034400\n"
    "0011100034400\n"
    "0011100034400\n"
    "001110001110G\n"
    "0011100034400\n"
    "0000000034400\n"
    "0000000034400\n"
    "0000000034400\n"
    "2220000034400\n"
    "S220000034400\n";

}  // namespace

GridWorld GridWorld::parse(const std::string& ascii) {
  GridWorld w;
  std::istringstream in(ascii);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (w.cols_ == 0) {
      w.cols_ = static_cast<int>(line.size());
    } else if (static_cast<int>(line.size()) != w.cols_) {
      throw InvalidMapError("map rows have unequal lengths");
    }
    for (char c : line) {
      const int state = static_cast<int>(w.cells_.size());
      switch (c) {
        case 'S':
          if (w.start_ >= 0) throw InvalidMapError("map has two start cells");
          w.start_ = state;
          w.cells_.push_back(kStartCell);
          break;
        case 'G':
          if (w.goal_ >= 0) throw InvalidMapError("map has two goal cells");
          w.goal_ = state;
          w.cells_.push_back(kGoalCell);
          break;
        case '0':
        case '1':
        case '2':
        case '3':
        case '4':
          w.cells_.push_back(c - '0');
          break;
        default:
          throw InvalidMapError(std::string("unexpected map character '") + c +
                                "'");
      }
    }
    ++w.rows_;
  }
  if (w.rows_ == 0) throw InvalidMapError("empty map");
  if (w.start_ < 0) throw InvalidMapError("map has no start cell");
  if (w.goal_ < 0) throw InvalidMapError("map has no goal cell");
  return w;
}

GridWorld GridWorld::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidMapError("cannot open map file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

const GridWorld& GridWorld::default_map() {
  static const GridWorld w = parse(kDefaultMap);
  return w;
}

const char* GridWorld::default_map_ascii() { return kDefaultMap; }

double GridWorld::reward(int state, const Eigen::VectorXd& color_rewards) const {
  const int c = cell(state);
  if (c == kGoalCell) return kGoalReward;
  if (c == kStartCell) return 0.0;
  return color_rewards[c];
}

int GridWorld::step(int state, int action) const {
  int r = state / cols_;
  int c = state % cols_;
  switch (action) {
    case 0: r = std::max(r - 1, 0); break;
    case 1: r = std::min(r + 1, rows_ - 1); break;
    case 2: c = std::max(c - 1, 0); break;
    case 3: c = std::min(c + 1, cols_ - 1); break;
    default: throw DomainError("gridworld action out of range");
  }
  return r * cols_ + c;
}

int QAgent::greedy_action(int state) const {
  int best = 0;
  for (int a = 1; a < 4; ++a)
    if (q(state, a) > q(state, best)) best = a;
  return best;
}

QAgent nw_train_agent(const GridWorld& world, const Eigen::VectorXd& rewards,
                      const QLearningOptions& opts, RngStream& rng) {
  if (rewards.size() != GridWorld::kNumColors)
    throw ShapeError("gridworld expects one reward per color");
  if (opts.alpha <= 0.0 || opts.alpha > 1.0 || opts.gamma <= 0.0 ||
      opts.gamma > 1.0)
    throw InvalidHyperparameterError("q-learning rates must lie in (0, 1]");
  if (opts.episodes < 1)
    throw InvalidHyperparameterError("q-learning needs at least one episode");

  QAgent agent{Eigen::MatrixXd::Zero(world.states(), 4)};
  for (int ep = 0; ep < opts.episodes; ++ep) {
    const double frac =
        opts.episodes > 1
            ? static_cast<double>(ep) / static_cast<double>(opts.episodes - 1)
            : 1.0;
    const double eps =
        opts.epsilon_start + (opts.epsilon_end - opts.epsilon_start) * frac;
    int s = world.start_state();
    for (int t = 0; t < opts.step_cap; ++t) {
      const int a = rng.uniform() < eps ? rng.uniform_int(4)
                                        : agent.greedy_action(s);
      const int s2 = world.step(s, a);
      const double r = world.reward(s2, rewards);
      const bool done = s2 == world.goal_state();
      const double target =
          done ? r : r + opts.gamma * agent.q.row(s2).maxCoeff();
      agent.q(s, a) += opts.alpha * (target - agent.q(s, a));
      s = s2;
      if (done) break;
    }
  }
  return agent;
}

TrajectorySummary nw_rollout(const GridWorld& world,
                             const Eigen::VectorXd& rewards,
                             const QAgent& agent, double slip, int step_cap,
                             RngStream& rng) {
  if (slip < 0.0 || slip >= 1.0)
    throw InvalidHyperparameterError("slip probability must lie in [0, 1)");
  TrajectorySummary out;
  int s = world.start_state();
  int prev_action = -1;
  for (int t = 0; t < step_cap; ++t) {
    int a = agent.greedy_action(s);
    if (slip > 0.0 && rng.uniform() < slip) a = rng.uniform_int(4);
    if (prev_action >= 0 && a != prev_action) ++out.turns;
    prev_action = a;
    s = world.step(s, a);
    out.reward += world.reward(s, rewards);
    ++out.steps;
    if (s == world.goal_state()) break;
  }
  return out;
}

Eigen::VectorXd nw_simulate(const GridWorld& world,
                            const Eigen::VectorXd& rewards,
                            const NwOptions& opts, RngStream& rng) {
  const QAgent agent = nw_train_agent(world, rewards, opts.training, rng);
  std::vector<TrajectorySummary> runs;
  runs.reserve(static_cast<std::size_t>(opts.trajectories));
  for (int i = 0; i < opts.trajectories; ++i)
    runs.push_back(nw_rollout(world, rewards, agent, opts.rollout_slip,
                              opts.training.step_cap, rng));
  std::sort(runs.begin(), runs.end(),
            [](const TrajectorySummary& a, const TrajectorySummary& b) {
              return std::tie(a.reward, a.steps, a.turns) <
                     std::tie(b.reward, b.steps, b.turns);
            });
  Eigen::VectorXd out(3 * opts.trajectories);
  for (int i = 0; i < opts.trajectories; ++i) {
    out[3 * i] = runs[static_cast<std::size_t>(i)].turns;
    out[3 * i + 1] = runs[static_cast<std::size_t>(i)].steps;
    out[3 * i + 2] = runs[static_cast<std::size_t>(i)].reward;
  }
  return out;
}

}  // namespace lfi
