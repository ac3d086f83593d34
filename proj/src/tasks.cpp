#include "weft/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

namespace weft {

// ----------------------------- vocabulary -----------------------------

Vocab::Vocab() {
    for (int d = 0; d <= 9; ++d) {
        symbols_.push_back(std::string(1, static_cast<char>('0' + d)));
    }
    for (const char* s : {"+", "-", "*", "%", "=", ".", "|"}) {
        symbols_.emplace_back(s);
    }
    pad_id_ = static_cast<int>(symbols_.size());
    symbols_.emplace_back("<pad>");
    mask_id_ = static_cast<int>(symbols_.size());
    symbols_.emplace_back("<mask>");
}

const Vocab& Vocab::standard() {
    static const Vocab vocab;
    return vocab;
}

int Vocab::id(std::string_view symbol) const {
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
        if (symbols_[i] == symbol) {
            return static_cast<int>(i);
        }
    }
    throw std::out_of_range("Vocab: unknown symbol '" + std::string(symbol) + "'");
}

const std::string& Vocab::symbol(int id) const {
    if (id < 0 || id >= size()) {
        throw std::out_of_range("Vocab: id out of range");
    }
    return symbols_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(std::string_view text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (char ch : text) {
        if (ch == '_') {
            ids.push_back(pad_id_);
        } else if (ch == '?') {
            ids.push_back(mask_id_);
        } else {
            ids.push_back(id(std::string_view(&ch, 1)));
        }
    }
    return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
    std::string out;
    for (int i : ids) {
        if (i == pad_id_) {
            out += '_';
        } else if (i == mask_id_) {
            out += '?';
        } else {
            out += symbol(i);
        }
    }
    return out;
}

std::string to_string(TaskKind kind) {
    switch (kind) {
    case TaskKind::sudoku4: return "sudoku4";
    case TaskKind::countdown: return "countdown";
    case TaskKind::modadd: return "modadd";
    }
    return "unknown";
}

TaskKind parse_task(std::string_view name) {
    if (name == "sudoku4" || name == "sudoku") return TaskKind::sudoku4;
    if (name == "countdown") return TaskKind::countdown;
    if (name == "modadd") return TaskKind::modadd;
    throw std::invalid_argument("unknown task: " + std::string(name));
}

std::vector<int> TaskInstance::sequence() const {
    std::vector<int> seq(prompt);
    seq.insert(seq.end(), answer.begin(), answer.end());
    return seq;
}

std::size_t answer_length(TaskKind task, int /*modulus*/) {
    switch (task) {
    case TaskKind::sudoku4: return 16;
    case TaskKind::countdown: return 8;
    case TaskKind::modadd: return 2;
    }
    return 0;
}

namespace {

std::vector<int> padded(std::string_view text, std::size_t width) {
    const Vocab& vocab = Vocab::standard();
    auto ids = vocab.encode(text);
    if (ids.size() > width) {
        throw std::logic_error("answer wider than its task width");
    }
    ids.resize(width, vocab.pad_id());
    return ids;
}

// Answer text with trailing pads removed; nullopt if a pad or mask appears
// before the last symbol.
std::optional<std::string> answer_text(std::span<const int> answer) {
    const Vocab& vocab = Vocab::standard();
    std::size_t end = answer.size();
    while (end > 0 && answer[end - 1] == vocab.pad_id()) {
        --end;
    }
    std::string text;
    for (std::size_t i = 0; i < end; ++i) {
        const int id = answer[i];
        if (id < 0 || id >= vocab.size() || id == vocab.pad_id() || id == vocab.mask_id()) {
            return std::nullopt;
        }
        text += vocab.symbol(id);
    }
    return text;
}

bool parse_decimal(std::string_view s, long long& out) {
    if (s.empty() || s.size() > 9 || (s.size() > 1 && s.front() == '0')) {
        return false;
    }
    out = 0;
    for (char ch : s) {
        if (ch < '0' || ch > '9') {
            return false;
        }
        out = out * 10 + (ch - '0');
    }
    return true;
}

// ---- Sudoku helpers ----
constexpr int kBox[16] = {0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3};

bool can_place(const Grid4& g, int cell, int v) {
    const int r = cell / 4;
    const int c = cell % 4;
    for (int k = 0; k < 16; ++k) {
        if (k == cell || g[static_cast<std::size_t>(k)] != v) {
            continue;
        }
        if (k / 4 == r || k % 4 == c || kBox[k] == kBox[cell]) {
            return false;
        }
    }
    return true;
}

void count_from(Grid4& g, int cell, int limit, int& found) {
    while (cell < 16 && g[static_cast<std::size_t>(cell)] != 0) {
        ++cell;
    }
    if (cell == 16) {
        ++found;
        return;
    }
    for (int v = 1; v <= 4 && found < limit; ++v) {
        if (can_place(g, cell, v)) {
            g[static_cast<std::size_t>(cell)] = v;
            count_from(g, cell + 1, limit, found);
            g[static_cast<std::size_t>(cell)] = 0;
        }
    }
}

bool fill_random(Grid4& g, int cell, RandomStream& rng) {
    if (cell == 16) {
        return true;
    }
    std::array<int, 4> order{1, 2, 3, 4};
    std::shuffle(order.begin(), order.end(), rng);
    for (int v : order) {
        if (can_place(g, cell, v)) {
            g[static_cast<std::size_t>(cell)] = v;
            if (fill_random(g, cell + 1, rng)) {
                return true;
            }
            g[static_cast<std::size_t>(cell)] = 0;
        }
    }
    return false;
}

std::string grid_text(const Grid4& g, char blank) {
    std::string s;
    for (int v : g) {
        s += v == 0 ? blank : static_cast<char>('0' + v);
    }
    return s;
}

Grid4 grid_from_json(const nlohmann::json& j) {
    Grid4 g{};
    const auto v = j.get<std::vector<int>>();
    if (v.size() != 16) {
        throw std::invalid_argument("sudoku payload must hold 16 cells");
    }
    std::copy(v.begin(), v.end(), g.begin());
    return g;
}

}  // namespace

// ----------------------------- sudoku -----------------------------

bool sudoku4_valid(const Grid4& grid) {
    for (int cell = 0; cell < 16; ++cell) {
        const int v = grid[static_cast<std::size_t>(cell)];
        if (v < 1 || v > 4 || !can_place(grid, cell, v)) {
            return false;
        }
    }
    return true;
}

int sudoku4_count_solutions(const Grid4& puzzle, int limit) {
    for (int cell = 0; cell < 16; ++cell) {
        const int v = puzzle[static_cast<std::size_t>(cell)];
        if (v < 0 || v > 4 || (v != 0 && !can_place(puzzle, cell, v))) {
            return 0;
        }
    }
    Grid4 g = puzzle;
    int found = 0;
    count_from(g, 0, limit, found);
    return found;
}

TaskInstance sudoku4_instance(const Grid4& puzzle, const Grid4& solution) {
    TaskInstance inst;
    inst.task = TaskKind::sudoku4;
    const Vocab& vocab = Vocab::standard();
    inst.prompt = vocab.encode(grid_text(puzzle, '.') + "=");
    inst.answer = padded(grid_text(solution, '.'), answer_length(TaskKind::sudoku4));
    inst.payload = {{"puzzle", std::vector<int>(puzzle.begin(), puzzle.end())},
                    {"solution", std::vector<int>(solution.begin(), solution.end())}};
    return inst;
}

TaskInstance gen_sudoku4(RandomStream& rng, int n_givens) {
    if (n_givens < 4 || n_givens > 16) {
        throw std::invalid_argument("gen_sudoku4: n_givens must lie in [4, 16]");
    }
    for (;;) {
        Grid4 solution{};
        fill_random(solution, 0, rng);
        Grid4 puzzle = solution;
        std::array<int, 16> cells{};
        std::iota(cells.begin(), cells.end(), 0);
        std::shuffle(cells.begin(), cells.end(), rng);
        int givens = 16;
        for (int cell : cells) {
            if (givens == n_givens) {
                break;
            }
            const auto c = static_cast<std::size_t>(cell);
            const int keep = puzzle[c];
            puzzle[c] = 0;
            if (sudoku4_count_solutions(puzzle, 2) == 1) {
                --givens;
            } else {
                puzzle[c] = keep;
            }
        }
        if (givens == n_givens) {
            return sudoku4_instance(puzzle, solution);
        }
    }
}

// ----------------------------- countdown -----------------------------

std::optional<long long> eval_expression(std::string_view expr) {
    // Tokenize into alternating numbers and operators.
    std::vector<long long> nums;
    std::vector<char> ops;
    std::size_t i = 0;
    while (i < expr.size()) {
        std::size_t j = i;
        while (j < expr.size() && expr[j] >= '0' && expr[j] <= '9') {
            ++j;
        }
        long long v = 0;
        if (!parse_decimal(expr.substr(i, j - i), v)) {
            return std::nullopt;
        }
        nums.push_back(v);
        if (j == expr.size()) {
            break;
        }
        const char op = expr[j];
        if (op != '+' && op != '-' && op != '*') {
            return std::nullopt;
        }
        ops.push_back(op);
        i = j + 1;
        if (i == expr.size()) {
            return std::nullopt;
        }
    }
    if (nums.empty()) {
        return std::nullopt;
    }
    // Fold multiplications first, then left-to-right + and -.
    std::vector<long long> terms{nums[0]};
    std::vector<char> signs{'+'};
    for (std::size_t k = 0; k < ops.size(); ++k) {
        if (ops[k] == '*') {
            terms.back() *= nums[k + 1];
        } else {
            terms.push_back(nums[k + 1]);
            signs.push_back(ops[k]);
        }
    }
    long long total = 0;
    for (std::size_t k = 0; k < terms.size(); ++k) {
        total += signs[k] == '+' ? terms[k] : -terms[k];
    }
    return total;
}

TaskInstance countdown_instance(std::array<int, 3> operands, int target, std::string_view expression) {
    TaskInstance inst;
    inst.task = TaskKind::countdown;
    const std::string prompt = std::to_string(operands[0]) + "|" + std::to_string(operands[1]) + "|" +
                               std::to_string(operands[2]) + "|" + std::to_string(target) + "=";
    inst.prompt = Vocab::standard().encode(prompt);
    inst.answer = padded(expression, answer_length(TaskKind::countdown));
    inst.payload = {{"operands", std::vector<int>(operands.begin(), operands.end())},
                    {"target", target},
                    {"expression", std::string(expression)}};
    return inst;
}

TaskInstance gen_countdown_mini(RandomStream& rng) {
    constexpr char kOps[3] = {'+', '-', '*'};
    for (;;) {
        std::array<int, 3> operands{};
        for (int& o : operands) {
            o = 1 + static_cast<int>(rng.below(20));
        }
        std::array<int, 3> order = operands;
        std::shuffle(order.begin(), order.end(), rng);
        const char op1 = kOps[rng.below(3)];
        const char op2 = kOps[rng.below(3)];
        const std::string expr =
            std::to_string(order[0]) + op1 + std::to_string(order[1]) + op2 + std::to_string(order[2]);
        const auto value = eval_expression(expr);
        if (value && *value >= 0) {
            return countdown_instance(operands, static_cast<int>(*value), expr);
        }
    }
}

// ----------------------------- modular addition -----------------------------

TaskInstance modadd_instance(int a, int b, int modulus) {
    if (modulus < 2 || modulus > 50 || a < 0 || b < 0 || a >= modulus || b >= modulus) {
        throw std::invalid_argument("modadd_instance: need 2 <= m <= 50 and 0 <= a, b < m");
    }
    TaskInstance inst;
    inst.task = TaskKind::modadd;
    const std::string prompt =
        std::to_string(a) + "+" + std::to_string(b) + "%" + std::to_string(modulus) + "=";
    inst.prompt = Vocab::standard().encode(prompt);
    inst.answer = padded(std::to_string((a + b) % modulus), answer_length(TaskKind::modadd, modulus));
    inst.payload = {{"a", a}, {"b", b}, {"m", modulus}};
    return inst;
}

TaskInstance gen_modadd(RandomStream& rng, int modulus) {
    if (modulus < 2 || modulus > 50) {
        throw std::invalid_argument("gen_modadd: modulus must lie in [2, 50]");
    }
    const int a = static_cast<int>(rng.below(static_cast<std::uint64_t>(modulus)));
    const int b = static_cast<int>(rng.below(static_cast<std::uint64_t>(modulus)));
    return modadd_instance(a, b, modulus);
}

// ----------------------------- verification -----------------------------

bool verify(const TaskInstance& instance, std::span<const int> answer) {
    if (answer.size() != instance.answer.size()) {
        return false;
    }
    const auto text = answer_text(answer);
    if (!text) {
        return false;
    }
    switch (instance.task) {
    case TaskKind::modadd: {
        long long v = 0;
        if (!parse_decimal(*text, v)) {
            return false;
        }
        const int a = instance.payload.at("a").get<int>();
        const int b = instance.payload.at("b").get<int>();
        const int m = instance.payload.at("m").get<int>();
        return v == (a + b) % m;
    }
    case TaskKind::sudoku4: {
        if (text->size() != 16) {
            return false;
        }
        Grid4 g{};
        for (std::size_t k = 0; k < 16; ++k) {
            const char ch = (*text)[k];
            if (ch < '1' || ch > '4') {
                return false;
            }
            g[k] = ch - '0';
        }
        const Grid4 puzzle = grid_from_json(instance.payload.at("puzzle"));
        for (std::size_t k = 0; k < 16; ++k) {
            if (puzzle[k] != 0 && puzzle[k] != g[k]) {
                return false;
            }
        }
        return sudoku4_valid(g);
    }
    case TaskKind::countdown: {
        const auto value = eval_expression(*text);
        if (!value || *value != instance.payload.at("target").get<long long>()) {
            return false;
        }
        // The operand multiset must match exactly.
        std::vector<int> used;
        std::size_t i = 0;
        while (i < text->size()) {
            std::size_t j = i;
            while (j < text->size() && (*text)[j] >= '0' && (*text)[j] <= '9') {
                ++j;
            }
            used.push_back(std::stoi(text->substr(i, j - i)));
            i = j + 1;
        }
        auto given = instance.payload.at("operands").get<std::vector<int>>();
        std::sort(used.begin(), used.end());
        std::sort(given.begin(), given.end());
        return used == given;
    }
    }
    return false;
}

// ----------------------------- datasets -----------------------------

TaskInstance generate_instance(const TaskSpec& spec, std::uint64_t seed, Split split, std::uint64_t index) {
    RandomStream rng = root_stream(seed)
                           .substream("data")
                           .substream(split == Split::train ? "train" : "eval")
                           .substream(index);
    switch (spec.kind) {
    case TaskKind::modadd:
        return gen_modadd(rng, spec.modulus);
    case TaskKind::countdown:
        return gen_countdown_mini(rng);
    case TaskKind::sudoku4: {
        const auto span = static_cast<std::uint64_t>(spec.max_givens - spec.min_givens + 1);
        const int givens = spec.min_givens + static_cast<int>(rng.below(span));
        return gen_sudoku4(rng, givens);
    }
    }
    throw std::invalid_argument("generate_instance: unknown task");
}

std::vector<TaskInstance> generate_dataset(const TaskSpec& spec, std::uint64_t seed, Split split, std::size_t n) {
    std::vector<TaskInstance> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(generate_instance(spec, seed, split, i));
    }
    return out;
}

nlohmann::json to_json(const TaskInstance& instance) {
    return {{"task", to_string(instance.task)},
            {"prompt_ids", instance.prompt},
            {"answer_ids", instance.answer},
            {"payload", instance.payload}};
}

TaskInstance instance_from_json(const nlohmann::json& j) {
    TaskInstance inst;
    inst.task = parse_task(j.at("task").get<std::string>());
    inst.prompt = j.at("prompt_ids").get<std::vector<int>>();
    inst.answer = j.at("answer_ids").get<std::vector<int>>();
    inst.payload = j.at("payload");
    if (inst.answer.empty()) {
        throw std::invalid_argument("dataset record has an empty answer");
    }
    return inst;
}

void save_dataset(const std::filesystem::path& path, std::span<const TaskInstance> data) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write dataset " + path.string());
    }
    for (const auto& inst : data) {
        out << to_json(inst).dump() << '\n';
    }
}

std::vector<TaskInstance> load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read dataset " + path.string());
    }
    std::vector<TaskInstance> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        out.push_back(instance_from_json(nlohmann::json::parse(line)));
    }
    return out;
}

}  // namespace weft
