"""Fit a 2-64-64-2 sigmoid network to one step of a damped pendulum.

Writes data/pendulum_net.json in the layout read by the neural_net model.
"""
import json
import pathlib

import torch

DT = 0.1
G_OVER_L = 1.0
DAMPING = 0.5
BOX = [[-3.5, 3.5], [-4.0, 4.0]]


def step(x):
    th, om = x[:, 0], x[:, 1]
    # RK4 on (theta, omega)
    def f(th, om):
        return om, -G_OVER_L * torch.sin(th) - DAMPING * om

    k1 = f(th, om)
    k2 = f(th + 0.5 * DT * k1[0], om + 0.5 * DT * k1[1])
    k3 = f(th + 0.5 * DT * k2[0], om + 0.5 * DT * k2[1])
    k4 = f(th + DT * k3[0], om + DT * k3[1])
    th1 = th + DT / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    om1 = om + DT / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    return torch.stack([th1, om1], dim=1)


def sample(n, gen):
    lo = torch.tensor([b[0] for b in BOX], dtype=torch.float64)
    hi = torch.tensor([b[1] for b in BOX], dtype=torch.float64)
    return lo + (hi - lo) * torch.rand(n, 2, generator=gen, dtype=torch.float64)


def main():
    gen = torch.Generator().manual_seed(7)
    torch.manual_seed(7)
    net = torch.nn.Sequential(
        torch.nn.Linear(2, 64),
        torch.nn.Sigmoid(),
        torch.nn.Linear(64, 64),
        torch.nn.Sigmoid(),
        torch.nn.Linear(64, 2),
    ).double()
    opt = torch.optim.Adam(net.parameters(), lr=3e-3)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=6000)
    for it in range(6000):
        x = sample(1024, gen)
        loss = torch.mean((net(x) - step(x)) ** 2)
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        if it % 1000 == 0:
            print(it, loss.item())
    x = sample(20000, gen)
    with torch.no_grad():
        rmse = torch.sqrt(torch.mean((net(x) - step(x)) ** 2)).item()
    print("test rmse", rmse)

    layers = []
    for m in net:
        if isinstance(m, torch.nn.Linear):
            layers.append(
                {"weights": m.weight.detach().tolist(), "bias": m.bias.detach().tolist()}
            )
    out = pathlib.Path(__file__).resolve().parent.parent / "data" / "pendulum_net.json"
    out.write_text(json.dumps({"layers": layers, "input_box": BOX}))


if __name__ == "__main__":
    main()
