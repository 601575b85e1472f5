#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace std;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("cd_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run(const std::string& args) {
    const std::string cmd = std::string(CDCTL_PATH) + " " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("unknown command and bad config exit with code 2") {
    CHECK(run("frobnicate") == 2);
    CHECK(run("train --set no_such_key=1") == 2);
    CHECK(run("train --set steps=notanumber") == 2);
    CHECK(run("train --set enable_ccr=false") == 2);  // conflicts with ccr_mode=ccr
}

TEST_CASE("synth writes a manifest and dataset layout") {
    auto dir = temp_dir("synth");
    CHECK(run("synth --seed 7 --n 4 --size 96 --rate 0.1 --out " + dir.string()) == 0);
    CHECK(fs::exists(dir / "manifest.txt"));
    CHECK(fs::exists(dir / "A" / "00000.png"));
    CHECK(fs::exists(dir / "B" / "00003.png"));
    CHECK(fs::exists(dir / "label" / "00002.png"));
    std::ifstream in(dir / "manifest.txt");
    int lines = 0;
    std::string l;
    while (std::getline(in, l)) ++lines;
    CHECK(lines == 4);

    // idempotent: rerunning with identical inputs overwrites identically
    auto before = read_bytes(dir / "A" / "00000.png");
    CHECK(run("synth --seed 7 --n 4 --size 96 --rate 0.1 --out " + dir.string()) == 0);
    CHECK(read_bytes(dir / "A" / "00000.png") == before);
}

TEST_CASE("pvf-dump endpoints are byte-identical to the inputs") {
    auto data = temp_dir("pvf_data");
    REQUIRE(run("synth --seed 3 --n 1 --size 96 --rate 0.1 --out " + data.string()) == 0);
    auto out = temp_dir("pvf_out");
    const auto pre = (data / "A" / "00000.png").string();
    const auto post = (data / "B" / "00000.png").string();
    CHECK(run("pvf-dump --pre " + pre + " --post " + post + " --frames 4 --out " +
              out.string()) == 0);
    for (const char* f : {"frame_00.png", "frame_01.png", "frame_02.png", "frame_03.png"}) {
        CHECK(fs::exists(out / f));
    }
    CHECK(read_bytes(out / "frame_00.png") == read_bytes(pre));
    CHECK(read_bytes(out / "frame_03.png") == read_bytes(post));

    CHECK(run("pvf-dump --pre " + pre + " --post " + post + " --frames 1 --out " +
              out.string()) == 2);
}
