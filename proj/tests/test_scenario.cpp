#include "clbench/scenario.hpp"

#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

using namespace clbench;

TEST_CASE("split tasks partition classes in ascending pairs") {
  auto sc = split_tasks("mnist", 10, 2, ScenarioKind::incremental_task,
                        default_head_policy(ScenarioKind::incremental_task));
  REQUIRE(sc.task_count() == 5);
  for (int t = 1; t <= 5; ++t) {
    const auto& task = sc.tasks[static_cast<std::size_t>(t - 1)];
    CHECK(task.t == t);
    CHECK(task.class_subset == std::vector<int>{2 * (t - 1), 2 * (t - 1) + 1});
    CHECK(task.label_map.at(2 * (t - 1)) == 0);
    CHECK(task.label_map.at(2 * (t - 1) + 1) == 1);
  }
}

TEST_CASE("split domain maps every task onto the shared label pair") {
  auto sc = split_tasks("mnist", 10, 2, ScenarioKind::incremental_domain,
                        default_head_policy(ScenarioKind::incremental_domain));
  for (const auto& task : sc.tasks) {
    std::set<int> presented;
    for (const auto& [src, dst] : task.label_map) presented.insert(dst);
    CHECK(presented == std::set<int>{0, 1});
  }
  CHECK(output_layout(sc, 1).total() == 2);
  CHECK(output_layout(sc, 5).total() == 2);
}

TEST_CASE("degenerate and invalid splits are rejected") {
  CHECK_THROWS(split_tasks("mnist", 10, 10, ScenarioKind::incremental_task,
                           default_head_policy(ScenarioKind::incremental_task)));  // k = 1
  CHECK_THROWS(split_tasks("mnist", 10, 3, ScenarioKind::incremental_task,
                           default_head_policy(ScenarioKind::incremental_task)));
}

TEST_CASE("head policy compatibility is enforced") {
  CHECK_THROWS(split_tasks("mnist", 10, 2, ScenarioKind::incremental_domain,
                           HeadPolicy{HeadLayoutKind::multi_head, HeadInit::random}));
  CHECK_THROWS(split_tasks("mnist", 10, 2, ScenarioKind::incremental_task,
                           HeadPolicy{HeadLayoutKind::single_head_fixed, HeadInit::random}));
  CHECK_THROWS(split_tasks("mnist", 10, 2, ScenarioKind::incremental_class,
                           HeadPolicy{HeadLayoutKind::single_head_fixed, HeadInit::random}));
}

TEST_CASE("permuted tasks: identity first, bijections, reseeded determinism") {
  auto sc1 = permuted_tasks("mnist", 10, 1024, 10, 42, ScenarioKind::incremental_domain,
                            default_head_policy(ScenarioKind::incremental_domain));
  auto sc2 = permuted_tasks("mnist", 10, 1024, 10, 42, ScenarioKind::incremental_domain,
                            default_head_policy(ScenarioKind::incremental_domain));
  REQUIRE(sc1.task_count() == 10);
  CHECK(sc1.tasks[0].permutation == rng::identity_permutation(1024));
  for (int t = 0; t < 10; ++t) {
    CHECK(sc1.tasks[static_cast<std::size_t>(t)].permutation ==
          sc2.tasks[static_cast<std::size_t>(t)].permutation);
    // sort-and-compare bijection oracle
    auto sorted = sc1.tasks[static_cast<std::size_t>(t)].permutation;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == rng::identity_permutation(1024));
  }
  auto sc3 = permuted_tasks("mnist", 10, 1024, 10, 43, ScenarioKind::incremental_domain,
                            default_head_policy(ScenarioKind::incremental_domain));
  CHECK(sc3.tasks[1].permutation != sc1.tasks[1].permutation);
  CHECK_THROWS(permuted_tasks("mnist", 10, 1024, 1, 42, ScenarioKind::incremental_domain,
                              default_head_policy(ScenarioKind::incremental_domain)));
}

TEST_CASE("permuted incremental class multiplies the label space") {
  auto sc = permuted_tasks("mnist", 10, 1024, 10, 7, ScenarioKind::incremental_class,
                           default_head_policy(ScenarioKind::incremental_class));
  CHECK(sc.total_classes() == 100);
  CHECK(sc.tasks[4].label_map.at(3) == 43);  // task 5, class 3 -> (5-1)*10 + 3
  CHECK(output_layout(sc, 10).total() == 100);
}

TEST_CASE("multi-dataset queue enumerates every class exactly once") {
  std::vector<DatasetHandle> handles{
      {"mnist", 10}, {"fashion", 10}, {"emnist_letters", 26}, {"cifar100", 100}};
  auto sc = multi_dataset_queue(handles, 2);
  CHECK(sc.task_count() == 5 + 5 + 13 + 50);
  CHECK(sc.kind == ScenarioKind::incremental_task);
  std::map<std::string, std::multiset<int>> seen;
  for (const auto& task : sc.tasks) {
    CHECK(task.class_subset.size() == 2);
    for (int c : task.class_subset) seen[task.source].insert(c);
  }
  for (const auto& [name, classes] : seen) {
    int expect = 0;
    for (const auto& h : handles)
      if (h.name == name) expect = h.class_count;
    CHECK(static_cast<int>(classes.size()) == expect);
    // each class exactly once
    std::set<int> unique(classes.begin(), classes.end());
    CHECK(unique.size() == classes.size());
  }

  // single dataset reduces to the split construction
  auto solo = multi_dataset_queue({{"mnist", 10}}, 2);
  auto split = split_tasks("mnist", 10, 2, ScenarioKind::incremental_task,
                           default_head_policy(ScenarioKind::incremental_task));
  REQUIRE(solo.task_count() == split.task_count());
  for (int t = 0; t < 5; ++t) {
    CHECK(solo.tasks[static_cast<std::size_t>(t)].class_subset ==
          split.tasks[static_cast<std::size_t>(t)].class_subset);
    CHECK(solo.tasks[static_cast<std::size_t>(t)].label_map ==
          split.tasks[static_cast<std::size_t>(t)].label_map);
  }

  CHECK_THROWS(multi_dataset_queue({{"odd", 5}}, 2));
}

TEST_CASE("present routes digit 3 in task 2 per scenario kind") {
  // incremental task: label within subset, only head 2 active
  {
    auto sc = split_tasks("mnist", 10, 2, ScenarioKind::incremental_task,
                          default_head_policy(ScenarioKind::incremental_task));
    Presented p = present_label(sc, sc.tasks[1], 3, 2);
    CHECK(p.label == 1);
    CHECK(p.mask.offset == 2);
    CHECK(p.mask.length == 2);
    CHECK(p.mask.total == 10);
    CHECK(p.logit_target() == 3);
  }
  // incremental domain: label within the shared pair, two outputs
  {
    auto sc = split_tasks("mnist", 10, 2, ScenarioKind::incremental_domain,
                          default_head_policy(ScenarioKind::incremental_domain));
    Presented p = present_label(sc, sc.tasks[1], 3, 2);
    CHECK(p.label == 1);
    CHECK(p.mask.offset == 0);
    CHECK(p.mask.length == 2);
  }
  // incremental class, growing: global label, outputs 0..3 active after T2
  {
    auto sc = split_tasks("mnist", 10, 2, ScenarioKind::incremental_class,
                          default_head_policy(ScenarioKind::incremental_class));
    Presented p = present_label(sc, sc.tasks[1], 3, 2);
    CHECK(p.label == 3);
    CHECK(p.mask.offset == 0);
    CHECK(p.mask.length == 4);
  }
  // routing errors
  {
    auto sc = split_tasks("mnist", 10, 2, ScenarioKind::incremental_task,
                          default_head_policy(ScenarioKind::incremental_task));
    CHECK_THROWS(present_label(sc, sc.tasks[1], 7, 2));
  }
}

TEST_CASE("present applies the pixel permutation") {
  auto sc = permuted_tasks("mnist", 10, 4, 3, 5, ScenarioKind::incremental_domain,
                           default_head_policy(ScenarioKind::incremental_domain));
  Tensor row({4}, {10.0f, 20.0f, 30.0f, 40.0f});
  PresentedSample ps = present(sc, sc.tasks[1], row, 7, 2);
  const auto& perm = sc.tasks[1].permutation;
  for (int i = 0; i < 4; ++i)
    CHECK(ps.input[i] == row[perm[static_cast<std::size_t>(i)]]);
  CHECK(ps.label == 7);
}

TEST_CASE("output layout across policies") {
  auto growing = split_tasks("mnist", 10, 2, ScenarioKind::incremental_class,
                             default_head_policy(ScenarioKind::incremental_class));
  CHECK(output_layout(growing, 3).total() == 6);

  auto prealloc = permuted_tasks(
      "mnist", 10, 1024, 10, 1, ScenarioKind::incremental_class,
      HeadPolicy{HeadLayoutKind::single_head_preallocated, HeadInit::random});
  CHECK(output_layout(prealloc, 1).total() == 100);

  auto multi = split_tasks("mnist", 10, 2, ScenarioKind::incremental_task,
                           default_head_policy(ScenarioKind::incremental_task));
  HeadLayout l = output_layout(multi, 5);
  CHECK(l.sizes == std::vector<int>{2, 2, 2, 2, 2});
  CHECK_THROWS(output_layout(multi, 6));
  CHECK_THROWS(output_layout(multi, 0));
}

TEST_CASE("per-task presented label distribution is uniform for balanced data") {
  auto sc = split_tasks("mnist", 10, 2, ScenarioKind::incremental_domain,
                        default_head_policy(ScenarioKind::incremental_domain));
  // balanced synthetic labels: 100 examples per class
  for (const auto& task : sc.tasks) {
    std::map<int, int> counts;
    for (int cls : task.class_subset)
      counts[task.label_map.at(cls)] += 100;
    CHECK(counts[0] == counts[1]);
  }
}

TEST_CASE("manifest round trip") {
  SUBCASE("split") {
    auto sc = split_tasks("mnist", 10, 2, ScenarioKind::incremental_class,
                          default_head_policy(ScenarioKind::incremental_class));
    std::stringstream s;
    write_manifest(sc, s);
    Scenario back = read_manifest(s);
    CHECK(back.kind == sc.kind);
    CHECK(back.head_policy.layout == sc.head_policy.layout);
    REQUIRE(back.task_count() == sc.task_count());
    for (int t = 0; t < sc.task_count(); ++t) {
      CHECK(back.tasks[static_cast<std::size_t>(t)].class_subset ==
            sc.tasks[static_cast<std::size_t>(t)].class_subset);
      CHECK(back.tasks[static_cast<std::size_t>(t)].label_map ==
            sc.tasks[static_cast<std::size_t>(t)].label_map);
    }
  }
  SUBCASE("permuted regenerates identical permutations") {
    auto sc = permuted_tasks("mnist", 10, 64, 4, 99, ScenarioKind::incremental_domain,
                             default_head_policy(ScenarioKind::incremental_domain));
    std::stringstream s;
    write_manifest(sc, s);
    Scenario back = read_manifest(s);
    for (int t = 0; t < 4; ++t)
      CHECK(back.tasks[static_cast<std::size_t>(t)].permutation ==
            sc.tasks[static_cast<std::size_t>(t)].permutation);
  }
  SUBCASE("bad header rejected") {
    std::stringstream s("not a manifest\n");
    CHECK_THROWS(read_manifest(s));
  }
}
