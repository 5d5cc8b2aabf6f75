#include "viv/io.hpp"

#include "viv/params.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace viv {

namespace {

constexpr std::uint64_t kFieldMagic = 0x5649565a464c4431ull; // "VIVZFLD1"
constexpr std::uint64_t kPressMagic = 0x56495650464c4431ull; // "VIVPFLD1"

void write_block(const std::string& path, std::uint64_t magic, const Mesh& m,
                 const Vec& data) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw SolverError("cannot open for writing: " + tmp);
        std::uint64_t dims[4] = {magic, static_cast<std::uint64_t>(m.nx),
                                 static_cast<std::uint64_t>(m.ny),
                                 static_cast<std::uint64_t>(data.size())};
        out.write(reinterpret_cast<const char*>(dims), sizeof dims);
        const double h = m.cfg.h;
        out.write(reinterpret_cast<const char*>(&h), sizeof h);
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!out) throw SolverError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);

    json side;
    side["nx"] = m.nx;
    side["ny"] = m.ny;
    side["h"] = m.cfg.h;
    side["x0"] = m.cfg.x0;
    side["y0"] = m.cfg.y0;
    side["outflow"] = m.cfg.outflow;
    side["dof_count"] = data.size();
    atomic_write(path + ".json", side.dump(2) + "\n");
}

Vec read_block(const std::string& path, std::uint64_t magic, const Mesh& m) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open snapshot: " + path);
    std::uint64_t dims[4];
    in.read(reinterpret_cast<char*>(dims), sizeof dims);
    double h = 0.0;
    in.read(reinterpret_cast<char*>(&h), sizeof h);
    if (!in || dims[0] != magic) {
        throw ValidationError("bad snapshot header: " + path);
    }
    if (static_cast<int>(dims[1]) != m.nx || static_cast<int>(dims[2]) != m.ny ||
        h != m.cfg.h) {
        throw ValidationError("snapshot mesh mismatch: " + path);
    }
    Vec data(static_cast<Eigen::Index>(dims[3]));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw ValidationError("truncated snapshot: " + path);
    return data;
}

} // namespace

void atomic_write(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw SolverError("cannot open for writing: " + tmp);
        out << content;
        if (!out) throw SolverError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

void save_field(const std::string& path, const Mesh& m, const CoupledField& f) {
    if (f.z.size() != m.nz()) throw ValidationError("field/mesh size mismatch");
    write_block(path, kFieldMagic, m, f.z);
}

CoupledField load_field(const std::string& path, const Mesh& m) {
    CoupledField f;
    f.z = read_block(path, kFieldMagic, m);
    if (f.z.size() != m.nz()) throw ValidationError("field/mesh size mismatch: " + path);
    return f;
}

void save_pressure(const std::string& path, const Mesh& m, const PressureField& p) {
    if (p.p.size() != m.np) throw ValidationError("pressure/mesh size mismatch");
    write_block(path, kPressMagic, m, p.p);
}

PressureField load_pressure(const std::string& path, const Mesh& m) {
    PressureField p;
    p.p = read_block(path, kPressMagic, m);
    if (p.p.size() != m.np) throw ValidationError("pressure/mesh size mismatch: " + path);
    return p;
}

void export_field_csv(const std::string& path, const Mesh& m, const CoupledField& f) {
    const auto fa = scatter_faces<double>(m, f.z);
    std::string out = "component,i,j,x,y,value\n";
    char buf[160];
    for (int j = 0; j < m.ny; ++j) {
        for (int i = 0; i <= m.nx; ++i) {
            std::snprintf(buf, sizeof buf, "u,%d,%d,%.17g,%.17g,%.17g\n", i, j,
                          m.ux(i), m.uy(j), fa.u[m.ufi(i, j)]);
            out += buf;
        }
    }
    for (int j = 0; j <= m.ny; ++j) {
        for (int i = 0; i < m.nx; ++i) {
            std::snprintf(buf, sizeof buf, "v,%d,%d,%.17g,%.17g,%.17g\n", i, j,
                          m.vx(i), m.vy(j), fa.v[m.vfi(i, j)]);
            out += buf;
        }
    }
    atomic_write(path, out);
}

void write_report(const std::string& path, json j, const std::string& config_hash) {
    j["artifact_version"] = kArtifactVersion;
    j["config_hash"] = config_hash;
    atomic_write(path, j.dump(2) + "\n");
}

} // namespace viv
