#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "rare/charset.hpp"

namespace rare {

// A search session exposes:
//   State start() const;
//   std::pair<State, std::array<double, kNumClasses>> step(const State&, int l_prev) const;
// where step consumes the previous label (kSos first) and returns the
// distribution over the next symbol.

/// Character trie over a lexicon. Children are kept in canonical order:
/// the EOS child first (it spells the shortest, lexicographically smallest
/// completion), then characters ascending.
class PrefixTree {
 public:
  struct Node {
    int label = -1;  // char label; kEos marks a leaf; -1 only at the root
    std::vector<int> children;
  };

  explicit PrefixTree(const std::vector<std::string>& lexicon) {
    if (lexicon.empty()) throw std::invalid_argument("prefix tree: empty lexicon");
    nodes_.push_back(Node{});
    std::vector<std::string> words;
    words.reserve(lexicon.size());
    for (const std::string& w : lexicon) {
      if (w.empty()) throw std::invalid_argument("prefix tree: empty word in lexicon");
      for (char c : w)
        if (!char_valid(c))
          throw std::invalid_argument("prefix tree: word '" + w +
                                      "' contains characters outside the alphabet");
      words.push_back(fold_case(w));
    }
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    for (const std::string& w : words) insert(w);
    word_count_ = static_cast<int>(words.size());
  }

  int root() const { return 0; }
  int label(int node) const { return nodes_[static_cast<size_t>(node)].label; }
  bool is_leaf(int node) const { return nodes_[static_cast<size_t>(node)].label == kEos; }
  const std::vector<int>& children(int node) const {
    return nodes_[static_cast<size_t>(node)].children;
  }
  int node_count() const { return static_cast<int>(nodes_.size()); }
  int word_count() const { return word_count_; }

  int leaf_count() const {
    int n = 0;
    for (const Node& node : nodes_) n += node.label == kEos;
    return n;
  }

 private:
  void insert(const std::string& word) {
    int node = 0;
    for (char c : word) node = child_or_insert(node, char_to_label(c));
    child_or_insert(node, kEos);
  }

  int child_or_insert(int node, int label) {
    for (int c : nodes_[static_cast<size_t>(node)].children)
      if (nodes_[static_cast<size_t>(c)].label == label) return c;
    nodes_.push_back(Node{label, {}});
    int id = static_cast<int>(nodes_.size()) - 1;
    auto& kids = nodes_[static_cast<size_t>(node)].children;
    auto key = [this](int n) {
      int l = nodes_[static_cast<size_t>(n)].label;
      return l == kEos ? -1 : static_cast<int>(label_to_char(l));
    };
    kids.insert(std::upper_bound(kids.begin(), kids.end(), id,
                                 [&](int a, int b) { return key(a) < key(b); }),
                id);
    return id;
  }

  std::vector<Node> nodes_;
  int word_count_ = 0;
};

struct SearchResult {
  std::string word;
  double log_prob = 0.0;
};

/// Greedy descent: at each node take the child with the highest model
/// probability (raw, unrenormalized); ties resolve to the canonically
/// first child, i.e. the lexicographically smaller completion.
template <typename Session>
SearchResult greedy_tree_search(const Session& session, const PrefixTree& tree) {
  typename Session::State state = session.start();
  int node = tree.root();
  int prev = kSos;
  SearchResult out;
  for (;;) {
    auto [next_state, probs] = session.step(state, prev);
    const std::vector<int>& kids = tree.children(node);
    int best = kids.front();
    for (int k : kids)
      if (probs[static_cast<size_t>(tree.label(k))] >
          probs[static_cast<size_t>(tree.label(best))])
        best = k;
    out.log_prob += std::log(probs[static_cast<size_t>(tree.label(best))]);
    if (tree.is_leaf(best)) return out;
    out.word.push_back(label_to_char(tree.label(best)));
    node = best;
    state = next_state;
    prev = tree.label(best);
  }
}

/// Top-B beam over the tree. Finished hypotheses keep competing for beam
/// slots; the search stops when the best-ranked entry is finished (scores
/// only decrease with extension, so it cannot be overtaken).
template <typename Session>
SearchResult beam_tree_search(const Session& session, const PrefixTree& tree, int width) {
  if (width < 1) throw std::invalid_argument("beam search: width must be >= 1");
  struct Entry {
    int node = 0;
    typename Session::State state;
    double score = 0.0;
    std::string path;
    int prev = kSos;
    bool finished = false;
  };
  auto better = [](const Entry& a, const Entry& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.path != b.path) return a.path < b.path;
    return a.finished && !b.finished;
  };

  std::vector<Entry> beam = {Entry{tree.root(), session.start(), 0.0, "", kSos, false}};
  for (;;) {
    if (beam.front().finished) return SearchResult{beam.front().path, beam.front().score};
    std::vector<Entry> next;
    for (Entry& e : beam) {
      if (e.finished) {
        next.push_back(std::move(e));
        continue;
      }
      auto [state, probs] = session.step(e.state, e.prev);
      for (int k : tree.children(e.node)) {
        Entry child = e;
        child.score += std::log(probs[static_cast<size_t>(tree.label(k))]);
        if (tree.is_leaf(k)) {
          child.finished = true;
        } else {
          child.node = k;
          child.state = state;
          child.prev = tree.label(k);
          child.path.push_back(label_to_char(tree.label(k)));
        }
        next.push_back(std::move(child));
      }
    }
    std::sort(next.begin(), next.end(), better);
    if (static_cast<int>(next.size()) > width) next.resize(static_cast<size_t>(width));
    beam = std::move(next);
  }
}

/// Sums teacher-forced log-probabilities of one word (plus EOS).
template <typename Session>
double score_word(const Session& session, const std::string& word) {
  LabelSequence labels = string_to_labels(word);
  labels.push_back(kEos);
  typename Session::State state = session.start();
  int prev = kSos;
  double lp = 0.0;
  for (int target : labels) {
    auto [next_state, probs] = session.step(state, prev);
    lp += std::log(probs[static_cast<size_t>(target)]);
    state = next_state;
    prev = target;
  }
  return lp;
}

/// Precise lexicon recognition: argmax of the posterior over every word;
/// ties resolve to the lexicographically smaller word.
template <typename Session>
SearchResult exhaustive_lexicon_score(const Session& session,
                                      const std::vector<std::string>& lexicon) {
  if (lexicon.empty()) throw std::invalid_argument("exhaustive search: empty lexicon");
  std::vector<std::string> words;
  words.reserve(lexicon.size());
  for (const std::string& w : lexicon) words.push_back(fold_case(w));
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  SearchResult best;
  bool first = true;
  for (const std::string& w : words) {
    double lp = score_word(session, w);
    if (first || lp > best.log_prob) {
      best = SearchResult{w, lp};
      first = false;
    }
  }
  return best;
}

}  // namespace rare
