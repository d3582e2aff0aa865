#include <gtest/gtest.h>

#include <json.hpp>
#include <random>

#include "ddlab/tokenizer.hpp"
#include "fixtures.hpp"

using namespace ddlab;
using ddlab::testing::data_dir;

namespace {

const BpeTokenizer& gpt2() {
    static const BpeTokenizer tok = BpeTokenizer::load(data_dir() / "gpt2");
    return tok;
}

std::vector<TokenId> fixture_ids(const std::string& name) {
    auto j = nlohmann::json::parse(read_file(data_dir() / "fixtures" / (name + ".ids.json")));
    return j.get<std::vector<TokenId>>();
}

}  // namespace

TEST(Gpt2Tokenizer, VocabularyShape) {
    EXPECT_EQ(gpt2().vocab_size(), 50257u);
    EXPECT_EQ(gpt2().assets().merges.size(), 50000u);
}

TEST(Gpt2Tokenizer, EmptyInput) { EXPECT_TRUE(gpt2().encode("").empty()); }

TEST(Gpt2Tokenizer, HelloWorld) {
    auto ids = gpt2().encode("Hello world");
    EXPECT_EQ(ids, (std::vector<TokenId>{15496, 995}));
    EXPECT_EQ(gpt2().decode(ids), "Hello world");
}

TEST(Gpt2Tokenizer, MatchesReferenceOnShakespeareFixture) {
    const auto text = read_file(data_dir() / "fixtures" / "shakespeare_20.txt");
    EXPECT_EQ(gpt2().encode(text), fixture_ids("shakespeare_20"));
    EXPECT_EQ(gpt2().decode(gpt2().encode(text)), text);
}

TEST(Gpt2Tokenizer, MatchesReferenceOnEdgeCases) {
    const auto text = read_file(data_dir() / "fixtures" / "edge_cases.txt");
    EXPECT_EQ(gpt2().encode(text), fixture_ids("edge_cases"));
    EXPECT_EQ(gpt2().decode(gpt2().encode(text)), text);
}

TEST(Gpt2Tokenizer, PretokenizerSplitsContractionsAndSpaces) {
    std::vector<std::string> got;
    for (auto p : gpt2_pretokenize("I'll  go 42x!")) got.emplace_back(p);
    EXPECT_EQ(got, (std::vector<std::string>{"I", "'ll", " ", " go", " 42", "x", "!"}));
}

TEST(Gpt2Tokenizer, ByteTableIsABijection) {
    auto t = gpt2_byte_to_unicode();
    std::set<char32_t> seen(t.begin(), t.end());
    EXPECT_EQ(seen.size(), 256u);
    EXPECT_EQ(t['A'], U'A');
    EXPECT_EQ(t[' '], char32_t(0x120));
}

TEST(Gpt2Tokenizer, RoundTripsRandomUtf8) {
    std::mt19937_64 gen(11);
    const std::vector<std::string> pieces{"a", "Z", " ", "  ", "\n", "\t", "'s", "'", "9", "é", "ß", "\u2014", "日本", "😀", "!", "..."};
    for (int trial = 0; trial < 200; ++trial) {
        std::string s;
        for (int i = 0; i < 30; ++i) s += pieces[gen() % pieces.size()];
        EXPECT_EQ(gpt2().decode(gpt2().encode(s)), s);
    }
}

TEST(Gpt2Tokenizer, MalformedMergesReportLine) {
    const std::string vocab = R"({"a": 0, "b": 1, "ab": 2})";
    try {
        TokenizerAssets::parse(vocab, "#version: 0.2\na b\nb\n");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
    try {
        TokenizerAssets::parse(vocab, "#version: 0.2\nb a\n");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
}

TEST(Gpt2Tokenizer, MalformedVocabularyIsAParseError) {
    EXPECT_THROW(TokenizerAssets::parse(R"({"a": 0, "b": 5})", ""), ParseError);
    try {
        TokenizerAssets::parse("{\n\"a\": 0,\n\"b\": }", "");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
}

TEST(ByteTokenizer, RoundTripsArbitraryBytes) {
    ByteTokenizer tok;
    std::mt19937_64 gen(5);
    for (int trial = 0; trial < 100; ++trial) {
        std::string s(gen() % 300, '\0');
        for (auto& c : s) c = static_cast<char>(gen() & 0xFF);
        auto ids = tok.encode(s);
        ASSERT_EQ(ids.size(), s.size());
        for (auto id : ids) ASSERT_LT(id, 256);
        EXPECT_EQ(tok.decode(ids), s);
    }
}

TEST(ByteTokenizer, RejectsIdsOutsideRange) {
    ByteTokenizer tok;
    std::vector<TokenId> bad{65, 256};
    EXPECT_THROW(tok.decode(bad), IndexError);
}

TEST(Tokenizer, SpecSelectsImplementation) {
    EXPECT_EQ(Tokenizer::from_spec("bytes").id(), "bytes");
    EXPECT_EQ(Tokenizer::from_spec((data_dir() / "gpt2").string()).vocab_size(), 50257u);
    EXPECT_THROW(Tokenizer::from_spec("/nonexistent/dir"), std::runtime_error);
}
