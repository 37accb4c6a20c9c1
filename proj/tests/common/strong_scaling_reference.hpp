#pragma once

#include <array>

// Published strong-scaling times (mean, +/- over four runs) for six
// infrastructures, with speedup and propagated error against W=1. The
// expected columns were evaluated separately in 40-digit decimal arithmetic
// and frozen here.
struct StrongScalingPoint {
  const char* infrastructure;
  unsigned world_size;
  double t1, dt1, t2, dt2;
  double speedup, speedup_err;
};

inline constexpr std::array<StrongScalingPoint, 42> kStrongScalingReference{{
    {"EC2 15GB 4 vCPU", 1, 16.28, 0.45, 16.28, 0.45, 1, 0.0390906697216},
    {"EC2 15GB 4 vCPU", 2, 16.28, 0.45, 9.41, 0.11, 1.73007438895, 0.0519220984748},
    {"EC2 15GB 4 vCPU", 4, 16.28, 0.45, 5.0, 0.32, 3.256, 0.226988747422},
    {"EC2 15GB 4 vCPU", 8, 16.28, 0.45, 2.89, 0.27, 5.63321799308, 0.548838043004},
    {"EC2 15GB 4 vCPU", 16, 16.28, 0.45, 1.37, 0.01, 11.8832116788, 0.339726780291},
    {"EC2 15GB 4 vCPU", 32, 16.28, 0.45, 0.88, 0.01, 18.5, 0.552890834427},
    {"EC2 15GB 4 vCPU", 64, 16.28, 0.45, 0.96, 0.01, 16.9583333333, 0.5009306735},
    {"EC2 7.5GB 2 vCPU", 1, 15.78, 0.22, 15.78, 0.22, 1, 0.0197165388924},
    {"EC2 7.5GB 2 vCPU", 2, 15.78, 0.22, 9.83, 0.25, 1.60528992879, 0.0465582616602},
    {"EC2 7.5GB 2 vCPU", 4, 15.78, 0.22, 5.31, 0.12, 2.97175141243, 0.0789099265239},
    {"EC2 7.5GB 2 vCPU", 8, 15.78, 0.22, 3.15, 0.33, 5.00952380952, 0.529434093321},
    {"EC2 7.5GB 2 vCPU", 16, 15.78, 0.22, 1.5, 0.1, 10.52, 0.716505098067},
    {"EC2 7.5GB 2 vCPU", 32, 15.78, 0.22, 0.94, 0.04, 16.7872340426, 0.751712969792},
    {"EC2 7.5GB 2 vCPU", 64, 15.78, 0.22, 1.09, 0.01, 14.4770642202, 0.241614764671},
    {"Lambda 10GB", 1, 17.76, 0.26, 17.76, 0.26, 1, 0.0207035769266},
    {"Lambda 10GB", 2, 17.76, 0.26, 10.41, 0.19, 1.7060518732, 0.039917345226},
    {"Lambda 10GB", 4, 17.76, 0.26, 5.08, 0.035, 3.49606299213, 0.0565658123671},
    {"Lambda 10GB", 8, 17.76, 0.26, 2.56, 0.094, 6.9375, 0.274236281832},
    {"Lambda 10GB", 16, 17.76, 0.26, 1.3, 0.03, 13.6615384615, 0.373353481811},
    {"Lambda 10GB", 32, 17.76, 0.26, 0.96, 0.11, 18.5, 2.13702302386},
    {"Lambda 10GB", 64, 17.76, 0.26, 1.12, 0.13, 15.8571428571, 1.85514310155},
    {"Lambda 6GB", 1, 17.5, 0.07, 17.5, 0.07, 1, 0.00565685424949},
    {"Lambda 6GB", 2, 17.5, 0.07, 10.62, 0.22, 1.64783427495, 0.0347664667401},
    {"Lambda 6GB", 4, 17.5, 0.07, 5.26, 0.16, 3.32699619772, 0.10207265493},
    {"Lambda 6GB", 8, 17.5, 0.07, 2.58, 0.029, 6.78294573643, 0.0809261344322},
    {"Lambda 6GB", 16, 17.5, 0.07, 1.36, 0.045, 12.8676470588, 0.42886756044},
    {"Lambda 6GB", 32, 17.5, 0.07, 0.96, 0.15, 18.2291666667, 2.84924047213},
    {"Lambda 6GB", 64, 17.5, 0.07, 0.96, 0.06, 18.2291666667, 1.14165386555},
    {"Rivanna 10GB", 1, 9.03, 0.01, 9.03, 0.01, 1, 0.00156612797605},
    {"Rivanna 10GB", 2, 9.03, 0.01, 4.83, 0.05, 1.86956521739, 0.0194641041365},
    {"Rivanna 10GB", 4, 9.03, 0.01, 2.48, 0.09, 3.64112903226, 0.13219925614},
    {"Rivanna 10GB", 8, 9.03, 0.01, 1.17, 0.003, 7.71794871795, 0.0215564399209},
    {"Rivanna 10GB", 16, 9.03, 0.01, 0.61, 0.007, 14.8032786885, 0.170662870802},
    {"Rivanna 10GB", 32, 9.03, 0.01, 0.37, 0.0007, 24.4054054054, 0.0535009313881},
    {"Rivanna 10GB", 64, 9.03, 0.01, 0.27, 0.01, 33.4444444444, 1.23923671373},
    {"Rivanna 6GB", 1, 8.96, 0.04, 8.96, 0.04, 1, 0.00631345340345},
    {"Rivanna 6GB", 2, 8.96, 0.04, 4.88, 0.1, 1.83606557377, 0.0385068017398},
    {"Rivanna 6GB", 4, 8.96, 0.04, 2.53, 0.12, 3.54150197628, 0.168718785329},
    {"Rivanna 6GB", 8, 8.96, 0.04, 1.19, 0.001, 7.52941176471, 0.0342037663924},
    {"Rivanna 6GB", 16, 8.96, 0.04, 0.6, 0.001, 14.9333333333, 0.0711610935453},
    {"Rivanna 6GB", 32, 8.96, 0.04, 0.29, 0.19, 30.8965517241, 20.2430382903},
    {"Rivanna 6GB", 64, 8.96, 0.04, 0.3, 0.02, 29.8666666667, 1.99557040331},
}};
