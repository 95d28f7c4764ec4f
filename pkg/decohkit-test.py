# A sample run of the decoherence toolkit
#
# This file exercises the library entry points used by the command line: T2 prediction for a noise spectrum,
# the band-bending solver and a short simulate/analyze round trip.
from decohkit.api import api_bandbend as bandbend_api

import decohkit

if __name__ == '__main__':
    with decohkit.DecohKit(config_path="synthetic-core-shell", out_dir="decohkit-sample") as kit:

        print("Predict T2(N) for the core-shell spectrum")
        prediction = kit.predict_t2([16, 64, 256, 1024])
        for n_pulses, t2 in prediction["t2_curve"]:
            print("N=%5d  T2=%.3e s" % (n_pulses, t2))
        print("Power law : " + str(prediction["power_law"]))

        print("Solve the radial Poisson problem for the silica shell")
        profile = kit.solve_band()
        print(bandbend_api.depletion_summary(profile))

        print("Simulate traces, then recover the noise spectrum")
        result = kit.simulate()
        print("Written : " + str(len(result.written)) + " files")
        result = kit.analyze()
        print("r^2 : " + str(result.data["noise_fit"].r_squared))

        # Bare particles: swap the spectrum and compare
        # kit.config["spectrum"] = "bare"
        # print(kit.predict_t2([16, 64, 256, 1024]))
