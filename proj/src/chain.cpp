#include "explore_prob/chain.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <string>

#include "explore_prob/errors.hpp"

namespace explore_prob {

namespace {

void add_outcome(FiniteMdp::Row& row, StateIndex next, double prob, double reward) {
  if (prob <= 0.0) return;
  for (Outcome& o : row) {
    if (o.next == next) {
      o.probability += prob;
      return;
    }
  }
  row.push_back({next, prob, reward});
}

// Success/failure pair of outcomes: move to `target` with prob, stay otherwise.
FiniteMdp::Row attempt(StateIndex self, StateIndex target, double prob, double reward) {
  FiniteMdp::Row row;
  add_outcome(row, target, prob, reward);
  add_outcome(row, self, 1.0 - prob, target == self ? reward : 0.0);
  return row;
}

}  // namespace

void validate_chain_spec(const ChainSpec& spec) {
  if (spec.n < 2) throw ValidationError("chain: n must be at least 2");
  const auto n = static_cast<std::size_t>(spec.n);
  if (spec.forward_p.size() != n - 1) throw ValidationError("chain: forward_p needs n-1 entries");
  for (double p : spec.forward_p)
    if (!(p > 0.0 && p <= 1.0)) throw ValidationError("chain: forward probabilities must lie in (0,1]");
  if (spec.hazard.size() != n) throw ValidationError("chain: hazard needs n entries");
  for (int h : spec.hazard)
    if (h != kResetHazard && h < 1) throw ValidationError("chain: finite hazard must be >= 1");
  if (spec.backward_p.size() != n) throw ValidationError("chain: backward_p needs n entries");
  for (double b : spec.backward_p)
    if (!(b > 0.0 && b <= 1.0)) throw ValidationError("chain: backward probabilities must lie in (0,1]");
  if (!(spec.r_G > 0.0) || !std::isfinite(spec.r_G)) throw ValidationError("chain: r_G must be positive");
  if (!(spec.r_D >= 0.0) || !std::isfinite(spec.r_D)) throw ValidationError("chain: r_D must be nonnegative");
  if (!(spec.gamma > 0.0 && spec.gamma < 1.0)) throw ValidationError("chain: gamma must lie in (0,1)");
}

ChainSpec make_prototype_spec(int hazard, Productivity g, int n, std::vector<double> forward_p, double r_G,
                              double r_D, double gamma) {
  if (hazard != 1 && hazard != kResetHazard) throw ValidationError("prototype hazard must be 1 or reset");
  if (n < 2) throw ValidationError("chain: n must be at least 2");
  ChainSpec spec;
  spec.n = n;
  spec.forward_p = std::move(forward_p);
  spec.hazard.assign(static_cast<std::size_t>(n), hazard);
  spec.productivity = g;
  spec.backward_p.assign(static_cast<std::size_t>(n), 1.0);
  spec.r_G = r_G;
  spec.r_D = r_D;
  spec.gamma = gamma;
  validate_chain_spec(spec);
  return spec;
}

ChainSpec make_prototype_spec(int hazard, Productivity g, int n, double p, double r_G, double r_D,
                              double gamma) {
  return make_prototype_spec(hazard, g, n, std::vector<double>(static_cast<std::size_t>(std::max(n - 1, 0)), p),
                             r_G, r_D, gamma);
}

int backward_target(const ChainSpec& spec, int i) {
  const int h = spec.hazard[static_cast<std::size_t>(i - 1)];
  if (h == kResetHazard) return 1;
  return std::max(1, i - h);
}

FiniteMdp build_general_chain(const ChainSpec& spec) {
  validate_chain_spec(spec);
  const auto n = static_cast<std::size_t>(spec.n);
  std::vector<std::vector<FiniteMdp::Row>> rows(n, std::vector<FiniteMdp::Row>(2));
  for (std::size_t s = 0; s < n; ++s) {
    if (s + 1 < n) {
      rows[s][kForward] = attempt(s, s + 1, spec.forward_p[s], 0.0);
    } else {
      const StateIndex next = spec.productivity == Productivity::SelfLoop ? s : 0;
      rows[s][kForward] = {{next, 1.0, spec.r_G}};
    }
    if (s == 0) {
      rows[s][kBackward] = {{0, 1.0, spec.r_D}};
    } else {
      const auto target = static_cast<StateIndex>(backward_target(spec, static_cast<int>(s) + 1) - 1);
      rows[s][kBackward] = attempt(s, target, spec.backward_p[s], 0.0);
    }
  }
  return FiniteMdp(std::move(rows), spec.gamma);
}

FiniteMdp build_prototype(int hazard, Productivity g, int n, const std::vector<double>& forward_p, double r_G,
                          double r_D, double gamma) {
  return build_general_chain(make_prototype_spec(hazard, g, n, forward_p, r_G, r_D, gamma));
}

Policy pbf_policy(int k, const ChainSpec& spec) {
  if (k < 0 || k > spec.n) throw ValidationError("pbf_policy: k must lie in 0..n");
  Policy p{std::vector<ActionIndex>(static_cast<std::size_t>(spec.n), kForward)};
  for (int i = 0; i < k; ++i) p.actions[static_cast<std::size_t>(i)] = kBackward;
  return p;
}

std::string prototype_label(int hazard, Productivity g) {
  std::string h = hazard == kResetHazard ? "Hinf" : "H" + std::to_string(hazard);
  return h + (g == Productivity::SelfLoop ? "_G1" : "_Greset");
}

MazeSpec maze_from_rows(const std::vector<std::string>& rows, double move_p, double r_G, double gamma) {
  MazeSpec maze;
  maze.move_p = move_p;
  maze.r_G = r_G;
  maze.gamma = gamma;
  for (const std::string& line : rows) {
    std::vector<Cell> row;
    for (char c : line) {
      switch (c) {
        case '.': row.push_back(Cell::Open); break;
        case '#': row.push_back(Cell::Blocked); break;
        case 'T': row.push_back(Cell::Trap); break;
        case 'S': row.push_back(Cell::Start); break;
        case 'G': row.push_back(Cell::Goal); break;
        default: throw ValidationError(std::string("maze: unknown cell character '") + c + "'");
      }
    }
    maze.grid.push_back(std::move(row));
  }
  return maze;
}

MazeSpec standard_maze(double move_p, double r_G, double gamma) {
  return maze_from_rows({".....",
                         ".....",
                         ".T#T.",
                         ".S#G.",
                         "..#.."},
                        move_p, r_G, gamma);
}

MazePair build_maze_pair(const MazeSpec& maze) {
  if (maze.grid.empty() || maze.grid.front().empty()) throw ValidationError("maze: empty grid");
  const int rows = static_cast<int>(maze.grid.size());
  const int cols = static_cast<int>(maze.grid.front().size());
  for (const auto& r : maze.grid)
    if (static_cast<int>(r.size()) != cols) throw ValidationError("maze: grid rows differ in length");
  if (!(maze.move_p > 0.0 && maze.move_p <= 1.0)) throw ValidationError("maze: move_p must lie in (0,1]");
  if (!(maze.r_G > 0.0)) throw ValidationError("maze: r_G must be positive");
  if (!(maze.gamma > 0.0 && maze.gamma < 1.0)) throw ValidationError("maze: gamma must lie in (0,1)");

  std::pair<int, int> start{-1, -1}, goal{-1, -1};
  int starts = 0, goals = 0;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (maze.grid[r][c] == Cell::Start) {
        start = {r, c};
        ++starts;
      } else if (maze.grid[r][c] == Cell::Goal) {
        goal = {r, c};
        ++goals;
      }
    }
  }
  if (starts != 1 || goals != 1) throw ValidationError("maze: need exactly one start and one goal");

  auto inside = [&](int r, int c) { return r >= 0 && r < rows && c >= 0 && c < cols; };
  auto walkable = [&](int r, int c) {
    return inside(r, c) && maze.grid[r][c] != Cell::Blocked && maze.grid[r][c] != Cell::Trap;
  };
  constexpr int kDr[4] = {-1, 1, 0, 0};
  constexpr int kDc[4] = {0, 0, -1, 1};

  // Shortest safe path from start to goal; it defines the chain.
  std::vector<std::vector<std::pair<int, int>>> parent(rows, std::vector<std::pair<int, int>>(cols, {-1, -1}));
  std::vector<std::vector<char>> seen(rows, std::vector<char>(cols, 0));
  std::deque<std::pair<int, int>> queue{start};
  seen[start.first][start.second] = 1;
  while (!queue.empty()) {
    const auto [r, c] = queue.front();
    queue.pop_front();
    for (int d = 0; d < 4; ++d) {
      const int nr = r + kDr[d], nc = c + kDc[d];
      if (!walkable(nr, nc) || seen[nr][nc]) continue;
      seen[nr][nc] = 1;
      parent[nr][nc] = {r, c};
      queue.push_back({nr, nc});
    }
  }
  if (!seen[goal.first][goal.second]) throw ValidationError("maze: goal unreachable from start");
  std::vector<std::pair<int, int>> path_cells;
  for (auto cell = goal; cell != std::pair<int, int>{-1, -1}; cell = parent[cell.first][cell.second])
    path_cells.push_back(cell);
  std::reverse(path_cells.begin(), path_cells.end());

  std::vector<std::vector<int>> index(rows, std::vector<int>(cols, -1));
  std::vector<std::pair<int, int>> cells;
  for (const auto& cell : path_cells) {
    index[cell.first][cell.second] = static_cast<int>(cells.size());
    cells.push_back(cell);
  }
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (walkable(r, c) && index[r][c] < 0) {
        index[r][c] = static_cast<int>(cells.size());
        cells.push_back({r, c});
      }
    }
  }

  const StateIndex start_state = 0;
  std::vector<std::vector<FiniteMdp::Row>> mdp_rows(cells.size());
  for (StateIndex s = 0; s < cells.size(); ++s) {
    const auto [r, c] = cells[s];
    for (int d = 0; d < 4; ++d) {
      const int nr = r + kDr[d], nc = c + kDc[d];
      if (!inside(nr, nc) || maze.grid[nr][nc] == Cell::Blocked) {
        mdp_rows[s].push_back({{s, 1.0, 0.0}});
      } else if (maze.grid[nr][nc] == Cell::Trap) {
        mdp_rows[s].push_back(attempt(s, start_state, maze.move_p, 0.0));
      } else {
        mdp_rows[s].push_back(attempt(s, static_cast<StateIndex>(index[nr][nc]), maze.move_p, 0.0));
      }
    }
    if (maze.grid[r][c] == Cell::Goal) mdp_rows[s].push_back({{start_state, 1.0, maze.r_G}});
  }

  ChainSpec chain;
  chain.n = static_cast<int>(path_cells.size());
  chain.forward_p.assign(path_cells.size() - 1, maze.move_p);
  chain.hazard.resize(path_cells.size());
  for (std::size_t i = 0; i < path_cells.size(); ++i)
    chain.hazard[i] = (i + 1) % 2 == 0 ? kResetHazard : 1;
  chain.productivity = Productivity::Reset;
  chain.backward_p.assign(path_cells.size(), maze.move_p);
  chain.r_G = maze.r_G;
  chain.r_D = 0.0;
  chain.gamma = maze.gamma;
  validate_chain_spec(chain);

  std::vector<StateIndex> path(path_cells.size());
  for (std::size_t i = 0; i < path.size(); ++i) path[i] = i;
  return {FiniteMdp(std::move(mdp_rows), maze.gamma), std::move(chain), std::move(cells), std::move(path)};
}

void to_json(nlohmann::json& j, const ChainSpec& spec) {
  nlohmann::json hazard = nlohmann::json::array();
  for (int h : spec.hazard) {
    if (h == kResetHazard)
      hazard.push_back("inf");
    else
      hazard.push_back(h);
  }
  j = nlohmann::json{{"n", spec.n},
                     {"forward_p", spec.forward_p},
                     {"hazard", hazard},
                     {"productivity", spec.productivity == Productivity::SelfLoop ? "SELF_LOOP" : "RESET"},
                     {"backward_p", spec.backward_p},
                     {"r_G", spec.r_G},
                     {"r_D", spec.r_D},
                     {"gamma", spec.gamma}};
}

namespace {

int parse_hazard(const nlohmann::json& h) {
  if (h.is_string()) {
    const std::string s = h.get<std::string>();
    if (s == "inf" || s == "RESET") return kResetHazard;
    throw ValidationError("hazard: unknown value '" + s + "'");
  }
  if (h.is_number_integer()) return h.get<int>();
  throw ValidationError("hazard: expected a positive integer or \"inf\"");
}

std::vector<double> number_list(const nlohmann::json& j, std::size_t count, const char* name) {
  if (j.is_number()) return std::vector<double>(count, j.get<double>());
  if (!j.is_array()) throw ValidationError(std::string(name) + ": expected a number or an array");
  return j.get<std::vector<double>>();
}

}  // namespace

void from_json(const nlohmann::json& j, ChainSpec& spec) {
  if (!j.is_object()) throw ValidationError("chain spec must be a JSON object");
  if (!j.contains("n")) throw ValidationError("chain spec: missing field 'n'");
  spec.n = j.at("n").get<int>();
  if (spec.n < 2) throw ValidationError("chain: n must be at least 2");
  const auto n = static_cast<std::size_t>(spec.n);
  if (!j.contains("forward_p")) throw ValidationError("chain spec: missing field 'forward_p'");
  spec.forward_p = number_list(j.at("forward_p"), n - 1, "forward_p");
  spec.hazard.clear();
  if (!j.contains("hazard")) throw ValidationError("chain spec: missing field 'hazard'");
  const auto& hz = j.at("hazard");
  if (hz.is_array()) {
    for (const auto& h : hz) spec.hazard.push_back(parse_hazard(h));
  } else {
    spec.hazard.assign(n, parse_hazard(hz));
  }
  const std::string prod = j.value("productivity", std::string("SELF_LOOP"));
  if (prod == "SELF_LOOP")
    spec.productivity = Productivity::SelfLoop;
  else if (prod == "RESET")
    spec.productivity = Productivity::Reset;
  else
    throw ValidationError("productivity must be SELF_LOOP or RESET");
  spec.backward_p = j.contains("backward_p") ? number_list(j.at("backward_p"), n, "backward_p")
                                             : std::vector<double>(n, 1.0);
  spec.r_G = j.value("r_G", 1.0);
  spec.r_D = j.value("r_D", 0.001);
  spec.gamma = j.value("gamma", 0.998);
  validate_chain_spec(spec);
}

}  // namespace explore_prob
