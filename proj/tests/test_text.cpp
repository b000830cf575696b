#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "dualprompt/phantom/phantom.hpp"
#include "dualprompt/text/encoder.hpp"
#include "dualprompt/text/prompt.hpp"

using namespace dualprompt;

TEST_CASE("prompt templates") {
    CHECK(make_prompt(Modality::CT, "abdomen", PromptKind::Context) ==
          "a computed tomography of abdomen");
    CHECK(make_prompt(Modality::CT, "spleen", PromptKind::Target) ==
          "a computed tomography of spleen");
    CHECK(make_prompt(Modality::MR, "liver", PromptKind::Target) ==
          "a magnetic resonance of liver");
    CHECK(make_prompt(Modality::PET, "thorax", PromptKind::Context) ==
          "a positron emission tomography of thorax");
    CHECK(make_prompt(Modality::CT, "Left Kidney", PromptKind::Target) ==
          "a computed tomography of left kidney");
    CHECK_THROWS_AS(make_prompt(Modality::CT, "", PromptKind::Context),
                    std::invalid_argument);

    const auto pair = make_prompt_pair(Modality::MR, "abdomen", "spleen");
    CHECK(pair.t1 == "a magnetic resonance of abdomen");
    CHECK(pair.t2 == "a magnetic resonance of spleen");
}

TEST_CASE("health-record sentence template") {
    EhrRecord r;
    r.sex = "male";
    r.age = 52;
    r.modality = Modality::CT;
    r.region = "Head & Neck";
    r.weight_kg = 82.0;
    r.smoking = true;
    r.alcohol = true;
    CHECK(serialize_ehr(r) ==
          "predict the risk score of a male patient, 52 years old, with ct imaging "
          "of the head & neck, a weight of 82 kilograms, and a history of smoking "
          "and alcohol consumption");

    SUBCASE("single habit") {
        r.alcohol = false;
        CHECK(serialize_ehr(r).ends_with("and a history of smoking"));
        r.smoking = false;
        r.alcohol = true;
        CHECK(serialize_ehr(r).ends_with("and a history of alcohol consumption"));
    }
    SUBCASE("no habits") {
        r.smoking = false;
        r.alcohol = false;
        CHECK(serialize_ehr(r).ends_with("and no smoking or alcohol history"));
    }
    SUBCASE("missing fields are named") {
        r.age.reset();
        CHECK_THROWS_WITH_AS(serialize_ehr(r), "missing required EHR field: age",
                             std::invalid_argument);
        r.age = 52;
        r.weight_kg.reset();
        CHECK_THROWS_WITH_AS(serialize_ehr(r), "missing required EHR field: weight",
                             std::invalid_argument);
    }
}

TEST_CASE("encoder output is unit-norm, deterministic, case-insensitive") {
    const TextEncoder enc;
    const auto a = enc.encode("a computed tomography of abdomen");
    const auto b = enc.encode("a computed tomography of abdomen");
    CHECK(a.vector == b.vector);
    CHECK(a.vector.size() == size_t(enc.dim()));

    double norm = 0.0;
    for (const float v : a.vector) norm += double(v) * v;
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-6));

    const auto upper = enc.encode("A COMPUTED TOMOGRAPHY OF ABDOMEN");
    CHECK(a.vector == upper.vector);
    // punctuation acts as a separator only
    const auto punct = enc.encode("a computed tomography, of abdomen!");
    CHECK(a.vector == punct.vector);

    CHECK_THROWS_AS(enc.encode(""), std::invalid_argument);
    CHECK_THROWS_AS(enc.encode("!!!"), std::invalid_argument);
}

TEST_CASE("encoder table is a pure function of the seed") {
    const TextEncoder a(4096, 64, 1), b(4096, 64, 1), c(4096, 64, 2);
    CHECK(a.table_checksum() == b.table_checksum());
    CHECK(a.table_checksum() != c.table_checksum());
    CHECK(a.parameter_count() == size_t(4096) * 64);
}

TEST_CASE("tokenizer splits on any non-alphanumeric byte") {
    const auto toks = TextEncoder::tokenize("A CT-scan, of  Left_Kidney!");
    CHECK(toks == std::vector<std::string>{"a", "ct", "scan", "of", "left", "kidney"});
}

TEST_CASE("all prompts of the phantom taxonomy embed distinctly") {
    const TextEncoder enc;
    std::vector<std::string> prompts;
    for (const auto& region : phantom::region_names()) {
        for (const Modality m : kAllModalities) {
            prompts.push_back(make_prompt(m, region, PromptKind::Context));
            for (const auto& organ : phantom::region_organs(region))
                prompts.push_back(make_prompt(m, organ, PromptKind::Target));
        }
    }
    CHECK(prompts.size() == 30);  // 2 regions x 3 modalities x (1 context + 4 organs)
    double min_dist = 1e9;
    for (size_t i = 0; i < prompts.size(); ++i)
        for (size_t j = i + 1; j < prompts.size(); ++j) {
            const auto a = enc.encode(prompts[i]).vector;
            const auto b = enc.encode(prompts[j]).vector;
            double d = 0.0;
            for (size_t k = 0; k < a.size(); ++k)
                d += (double(a[k]) - b[k]) * (double(a[k]) - b[k]);
            min_dist = std::min(min_dist, std::sqrt(d));
        }
    CHECK(min_dist > 0.0);
}
